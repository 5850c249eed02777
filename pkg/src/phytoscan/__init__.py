"""Laser-scanned plant reconstruction and growth measurement.

The package turns multi-view point clouds of a growing plant into surface
area and volume time series: scans are merged by non-rigid registration
(with branch junctions as natural landmarks for the rough alignment), the
merged cloud becomes a measured surface through an alpha-shape
reconstruction, and the session series feeds a diurnal growth analysis.
A synthetic plant generator with a virtual scanner provides ground truth
for all of it.
"""

__version__ = "0.1.0"

from .cloudcore import PointCloud, load_cloud, save_cloud, voxel_downsample
from .errors import (DataQualityError, DegenerateGeometryError,
                     EmptyCloudError, NoAlignmentError, ParseError,
                     PhytoscanError, PreconditionError, RegistrationError)

__all__ = [
    "__version__",
    "PointCloud", "load_cloud", "save_cloud", "voxel_downsample",
    "PhytoscanError", "PreconditionError", "DataQualityError", "ParseError",
    "EmptyCloudError", "RegistrationError", "NoAlignmentError",
    "DegenerateGeometryError",
]

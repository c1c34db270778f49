"""Label-free chamber segmentation and quantification for echocardiograms."""

from .labels import Chamber
from .raster import Raster, SectorGeometry, standardize

__all__ = ["Chamber", "Raster", "SectorGeometry", "standardize"]
__version__ = "0.1.0"

"""Multi-step cascaded 3D segmentation of nested tumor regions."""

from cascadeseg.core_types import (
    LABEL_VALUES,
    LabelMap,
    ModalityStack,
    Region,
    RegionMask,
    compose_labels,
    region_mask_from_labels,
    validate_hierarchy,
)

__version__ = "0.1.0"

__all__ = [
    "LABEL_VALUES",
    "LabelMap",
    "ModalityStack",
    "Region",
    "RegionMask",
    "compose_labels",
    "region_mask_from_labels",
    "validate_hierarchy",
]

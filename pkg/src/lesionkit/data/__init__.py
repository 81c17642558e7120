from .manifest import HEADER, ManifestRecord, load_manifest, write_manifest
from .pnm import load_image, load_mask, save_image, save_mask
from .split import split
from .synth import SyntheticConfig, SyntheticDataset, lesion_region, synth_generate
from .weights import (
    load_bundle,
    load_checkpoint,
    load_network,
    load_weights,
    save_bundle,
    save_checkpoint,
    save_network,
    save_weights,
)

__all__ = [
    "HEADER", "ManifestRecord", "SyntheticConfig", "SyntheticDataset", "lesion_region",
    "load_bundle", "load_checkpoint", "load_image", "load_manifest", "load_mask",
    "load_network", "load_weights", "save_bundle", "save_checkpoint", "save_image",
    "save_mask", "save_network", "save_weights", "split", "synth_generate", "write_manifest",
]

"""Synthetic RGB/THR/depth data, augmentation and file formats."""

from rtfusion.data.augment import AugmentParams, augment, center_crop
from rtfusion.data.dataset import Dataset, generate_dataset, parse_scenarios, read_sample, split_seeds, write_sample
from rtfusion.data.io import FormatError, read_pfm, read_pgm, read_ppm, write_pfm, write_pgm16, write_ppm
from rtfusion.data.synth import SCENARIOS, SamplePair, SceneSpec, generate

__all__ = [
    "AugmentParams", "augment", "center_crop",
    "Dataset", "generate_dataset", "parse_scenarios", "read_sample", "split_seeds", "write_sample",
    "FormatError", "read_pfm", "read_pgm", "read_ppm", "write_pfm", "write_pgm16", "write_ppm",
    "SCENARIOS", "SamplePair", "SceneSpec", "generate",
]

"""Synthetic sequence generation and pose dataset containers."""

from .dataset import DatasetManifest, IngestManifest, PoseDataset, ingest_external, load_dataset, save_dataset
from .synthetic import SyntheticSpec, generate_synthetic

__all__ = [
    "DatasetManifest",
    "IngestManifest",
    "PoseDataset",
    "SyntheticSpec",
    "generate_synthetic",
    "ingest_external",
    "load_dataset",
    "save_dataset",
]

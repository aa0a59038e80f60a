"""Bridging ingestion/preprocess outputs to trainer-ready tensors."""

from __future__ import annotations

import numpy as np
import torch

from .core import DocumentSample
from .ingestion import rasterize_masks
from .network import image_to_tensor
from .preprocess import PreprocessConfig, prepare_input


def sample_to_tensors(
    sample: DocumentSample,
    input_size: int,
    config: PreprocessConfig | None = None,
    seed: int | None = None,
    highlight: bool = True,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Preprocess one sample and rasterize its masks at the network size."""
    config = config or PreprocessConfig(target_size=input_size)
    if config.target_size != input_size:
        config = PreprocessConfig(
            target_size=input_size, drop_prob=config.drop_prob, palette=config.palette
        )
    prepared = prepare_input(sample, config, seed=seed, highlight=highlight)
    table_mask, column_mask = rasterize_masks(prepared, input_size, input_size)
    image = image_to_tensor(prepared.image)[0]
    return (
        image,
        torch.from_numpy(table_mask.astype(np.int64)),
        torch.from_numpy(column_mask.astype(np.int64)),
    )


def positives_only(samples: list[DocumentSample]) -> list[DocumentSample]:
    return [s for s in samples if s.tables]

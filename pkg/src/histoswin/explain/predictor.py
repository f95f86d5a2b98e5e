"""Black-box adapters shared by the explainers."""
from __future__ import annotations

from typing import Callable, Mapping, Optional

import numpy as np

from ..model import EVAL_CHUNK, HybridModelConfig, forward_batch
from ..parallel import ordered_map

Predictor = Callable[[np.ndarray], np.ndarray]  # N×C×H×W -> N×K probabilities


def model_predictor(params: Mapping, cfg: HybridModelConfig, workers: Optional[int] = None) -> Predictor:
    """Probability function of a trained model over normalized image stacks."""

    def predict(xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float32)
        starts = range(0, len(xs), EVAL_CHUNK)
        return np.concatenate(ordered_map(lambda i: forward_batch(xs[i:i + EVAL_CHUNK], params, cfg).data,
                                          starts, workers))

    return predict


def batched(predict: Predictor, images: np.ndarray, chunk: int = 64) -> np.ndarray:
    """Evaluate a predictor over a large stack without materializing it all at once."""
    return np.concatenate([np.asarray(predict(images[i:i + chunk])) for i in range(0, len(images), chunk)])

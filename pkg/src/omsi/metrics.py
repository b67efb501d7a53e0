"""Accuracy, Learning Accuracy (LA), Retained Accuracy (RA) and the run record."""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .errors import EvaluationError
from .tensorcore import MlpParams, predict


def accuracy(params: MlpParams, dataset) -> float:
    """Fraction of rows whose argmax logit (lowest index on ties) equals the label."""
    if len(dataset) == 0:
        raise EvaluationError("accuracy of an empty dataset is undefined")
    return float(np.mean(predict(params, dataset.inputs) == dataset.labels))


def learning_accuracy(params: MlpParams, experience) -> float:
    """Test accuracy on the experience just trained on."""
    return accuracy(params, experience.test)


def retained_accuracy(params: MlpParams, experiences_seen: Sequence) -> float:
    """Unweighted mean of test accuracies over every experience seen so far."""
    if not experiences_seen:
        raise EvaluationError("retained accuracy needs at least one experience")
    return float(np.mean([accuracy(params, e.test) for e in experiences_seen]))


@dataclass
class StepTrace:
    step: int
    experience: int
    weights_before: np.ndarray
    weights_after: np.ndarray
    source: np.ndarray
    noisy: np.ndarray
    inner_losses: List[float] = field(default_factory=list)
    meta_loss: Optional[float] = None

    def to_json(self) -> Dict[str, Any]:
        return {
            "step": int(self.step),
            "experience": int(self.experience),
            "weights_before": [float(v) for v in self.weights_before],
            "weights_after": [float(v) for v in self.weights_after],
            "noisy": [bool(v) for v in self.noisy],
            "source": ["buffer" if s else "stream" for s in self.source],
            "meta_loss": None if self.meta_loss is None else float(self.meta_loss),
        }


@dataclass
class ExperienceResult:
    experience: int
    la: float
    ra: float


@dataclass
class RunRecord:
    per_experience: List[ExperienceResult] = field(default_factory=list)
    step_traces: List[StepTrace] = field(default_factory=list)
    config: Dict[str, Any] = field(default_factory=dict)
    seeds: Dict[str, int] = field(default_factory=dict)
    duration: float = 0.0

    @property
    def average_la(self) -> float:
        """Mean LA over the stream's experiences."""
        return float(np.mean([r.la for r in self.per_experience]))

    @property
    def final_ra(self) -> float:
        return self.per_experience[-1].ra


def to_percent(fraction: float) -> str:
    """Render a fraction as a percentage with one decimal."""
    return f"{100.0 * fraction:.1f}"

"""Cosine noise schedule with a strided train-to-inference step mapping.

alpha_bar follows the squared-cosine profile; betas are derived from its
successive ratios. Inference uses a fixed stride into the training range:
with 1000 training steps and 100 inference steps, inference step index k
corresponds to training timestep (100 - k) * 10 - 1, so the latent after 40
completed steps sits at t = 599 (0.6 of the way through the forward process).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    T_train: int = 1000
    inference_steps: int = 100
    betas: np.ndarray = field(default=None, repr=False)
    alpha_bar: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.betas is None:
            betas = cosine_betas(self.T_train)
            object.__setattr__(self, "betas", betas)
        object.__setattr__(
            self, "alpha_bar", np.cumprod(1.0 - np.asarray(self.betas, dtype=np.float64))
        )
        self.validate()

    def validate(self) -> None:
        betas = np.asarray(self.betas)
        if betas.shape != (self.T_train,):
            raise ValueError(f"betas must have length T_train={self.T_train}")
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise ValueError("betas must lie in (0, 1)")
        if np.any(np.diff(self.alpha_bar) >= 0.0):
            raise ValueError("alpha_bar must be strictly decreasing")
        if abs(self.alpha_bar[0] - 1.0) > 1e-3:
            raise ValueError(f"alpha_bar(0) = {self.alpha_bar[0]} deviates from 1 by > 1e-3")
        if self.T_train % self.inference_steps != 0:
            raise ValueError("inference_steps must divide T_train")

    def inference_times(self) -> np.ndarray:
        """Training timestep occupied by the latent after k completed inference steps."""
        stride = self.T_train // self.inference_steps
        k = np.arange(self.inference_steps)
        return (self.inference_steps - k) * stride - 1

    def alpha_bar_at(self, t: int) -> float:
        """alpha_bar(t), with t = -1 denoting the clean endpoint (alpha_bar = 1)."""
        if t == -1:
            return 1.0
        return float(self.alpha_bar[t])

    def add_noise(self, x0, t: int, noise):
        """Forward process: sqrt(ab_t) * x0 + sqrt(1 - ab_t) * noise."""
        if not 0 <= t < self.T_train:
            raise ValueError(f"t={t} outside [0, {self.T_train})")
        ab = self.alpha_bar_at(t)
        return (ab**0.5) * x0 + ((1.0 - ab) ** 0.5) * noise

    def predict_x0(self, x_t, eps, t: int):
        """Invert the forward process given the noise estimate."""
        ab = self.alpha_bar_at(t)
        return (x_t - ((1.0 - ab) ** 0.5) * eps) / (ab**0.5)

    def ddim_step(self, x_t, eps, t: int, t_prev: int):
        """Deterministic (eta = 0) DDIM update from t to t_prev; returns (x_prev, x0_pred)."""
        x0_pred = self.predict_x0(x_t, eps, t)
        ab_prev = self.alpha_bar_at(t_prev)
        x_prev = (ab_prev**0.5) * x0_pred + ((1.0 - ab_prev) ** 0.5) * eps
        return x_prev, x0_pred

    def to_dict(self) -> dict:
        return {
            "T_train": self.T_train,
            "inference_steps": self.inference_steps,
            "betas": np.asarray(self.betas).tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NoiseSchedule":
        return cls(
            T_train=data["T_train"],
            inference_steps=data["inference_steps"],
            betas=np.asarray(data["betas"], dtype=np.float64),
        )


def cosine_betas(T: int, s: float = 0.008, max_beta: float = 0.999) -> np.ndarray:
    steps = np.arange(T + 1, dtype=np.float64)
    f = np.cos(((steps / T + s) / (1.0 + s)) * np.pi / 2.0) ** 2
    betas = 1.0 - f[1:] / f[:-1]
    return np.clip(betas, 1e-8, max_beta)

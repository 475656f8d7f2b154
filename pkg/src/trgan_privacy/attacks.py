"""Membership inference against the GAN: critic-score ranking and latent reconstruction."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from . import metrics
from .trgan import critic_scores
from .volume import Sample


class AttackError(RuntimeError):
    pass


@dataclass
class AttackScenario:
    samples: list[Sample]

    def __post_init__(self):
        if any(s.member is None for s in self.samples):
            raise ValueError("every scenario sample needs a membership label")
        if not 0 < self.m < self.n:
            raise ValueError(f"scenario needs 0 < m < n, got m={self.m}, n={self.n}")

    @property
    def n(self) -> int:
        return len(self.samples)

    @property
    def m(self) -> int:
        return sum(bool(s.member) for s in self.samples)

    @classmethod
    def build(cls, members: Sequence[Sample], non_members: Sequence[Sample]) -> "AttackScenario":
        """Label and sort samples by id so that ranking ties never follow membership."""
        labelled = [Sample(s.id, s.volume, s.mask, True) for s in members]
        labelled += [Sample(s.id, s.volume, s.mask, False) for s in non_members]
        return cls(sorted(labelled, key=lambda s: s.id))


@dataclass(frozen=True)
class AttackNetConfig:
    hidden: int = 128
    iterations: int = 10000
    learning_rate: float = 1e-4
    per_sample: bool = False
    seed: int = 0

    def validate(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.hidden < 1:
            raise ValueError("hidden width must be >= 1")


@dataclass
class AttackResult:
    kind: str
    ids: list[str]
    scores: np.ndarray
    members: np.ndarray
    step: Optional[int] = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.members = np.asarray(self.members, dtype=bool)

    @property
    def m(self) -> int:
        return int(self.members.sum())

    @property
    def roc(self) -> metrics.RocCurve:
        return metrics.roc_curve(self.scores, self.members)

    @property
    def auc(self) -> float:
        return metrics.auc(self.scores, self.members)

    def t_test(self) -> tuple[float, float]:
        try:
            return metrics.welch_t_test(self.scores[self.members], self.scores[~self.members])
        except ValueError:
            return float("nan"), float("nan")

    @property
    def top_m_accuracy(self) -> float:
        return top_m_classify(self.scores, self.m, self.members)[1]

    def summary(self) -> dict:
        t, p = self.t_test()
        return {"kind": self.kind, "step": self.step, "n": len(self.ids), "m": self.m,
                "auc": self.auc, "t_statistic": t, "p_value": p,
                "top_m_accuracy": self.top_m_accuracy,
                "privacy": metrics.privacy_protection(self.auc)}

    def save(self, path):
        doc = {"summary": self.summary(),
               "samples": [{"id": i, "score": float(s), "member": bool(mm)}
                           for i, s, mm in zip(self.ids, self.scores, self.members)]}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)

    @classmethod
    def load(cls, path) -> "AttackResult":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        recs = doc["samples"]
        s = doc["summary"]
        return cls(kind=s["kind"], ids=[r["id"] for r in recs],
                   scores=[r["score"] for r in recs], members=[r["member"] for r in recs],
                   step=s.get("step"))


def top_m_classify(scores, m: int, truth=None) -> tuple[np.ndarray, Optional[float]]:
    """Label the m highest scores as members; ties keep input order."""
    scores = np.asarray(scores, dtype=np.float64)
    if not 0 <= m <= scores.size:
        raise ValueError(f"m must be in [0, {scores.size}], got {m}")
    order = np.argsort(-scores, kind="stable")
    labels = np.zeros(scores.size, dtype=bool)
    labels[order[:m]] = True
    if truth is None:
        return labels, None
    truth = np.asarray(truth, dtype=bool)
    return labels, float(np.mean(labels == truth))


def _stack(scenario: AttackScenario):
    images = torch.as_tensor(np.stack([s.volume.data for s in scenario.samples]), dtype=torch.float32)
    masks = torch.as_tensor(np.stack([s.mask.data for s in scenario.samples]), dtype=torch.float32)
    return images, masks


def _result(kind, scenario, scores, step, **extra) -> AttackResult:
    return AttackResult(kind=kind, ids=[s.id for s in scenario.samples], scores=scores,
                        members=[bool(s.member) for s in scenario.samples], step=step, extra=extra)


def discriminator_attack(disc: nn.Module, scenario: AttackScenario, omega: float,
                         step: Optional[int] = None) -> AttackResult:
    images, masks = _stack(scenario)
    with torch.no_grad():
        scores = critic_scores(disc, images, masks, omega).double().numpy()
    return _result("discriminator", scenario, scores, step)


class AttackNet(nn.Module):
    """Two dense layers mapping a flattened volume to a generator latent z0."""

    def __init__(self, n_inputs: int, hidden: int, n_latent: int):
        super().__init__()
        self.fc1 = nn.Linear(n_inputs, hidden)
        self.fc2 = nn.Linear(hidden, n_latent)

    def forward(self, x):
        return self.fc2(torch.relu(self.fc1(x)))


class PerSampleAttackNet(nn.Module):
    """Independent two-layer networks, one per sample, evaluated in one batch."""

    def __init__(self, n_samples: int, n_inputs: int, hidden: int, n_latent: int):
        super().__init__()
        ref = [AttackNet(n_inputs, hidden, n_latent) for _ in range(n_samples)]
        self.w1 = nn.Parameter(torch.stack([r.fc1.weight.detach().T for r in ref]))
        self.b1 = nn.Parameter(torch.stack([r.fc1.bias.detach() for r in ref]))
        self.w2 = nn.Parameter(torch.stack([r.fc2.weight.detach().T for r in ref]))
        self.b2 = nn.Parameter(torch.stack([r.fc2.bias.detach() for r in ref]))

    def forward(self, x):
        h = torch.relu(torch.einsum("ni,nih->nh", x, self.w1) + self.b1)
        return torch.einsum("nh,nhl->nl", h, self.w2) + self.b2


def reconstruction_losses(attack_net: nn.Module, gen: nn.Module, images: torch.Tensor,
                          masks: torch.Tensor) -> torch.Tensor:
    """Per-sample L2 norm ||G(A(x_i), mask_i) - x_i||."""
    z0 = attack_net(images.flatten(1))
    recon = gen(z0, masks)
    return torch.linalg.vector_norm((recon - images).flatten(1), dim=1)


def train_attack_network(gen: nn.Module, scenario: AttackScenario,
                         config: AttackNetConfig) -> np.ndarray:
    """Train the inversion network and return each sample's minimum loss over all steps."""
    config.validate()
    images, masks = _stack(scenario)
    gen_dims = getattr(gen, "dims", None)
    if gen_dims is not None:
        w, h, d = gen_dims
        if tuple(images.shape[1:]) != (d, h, w):
            raise ValueError(f"sample grid {tuple(images.shape[1:])} does not match generator grid")
    torch.manual_seed(config.seed)
    n_in = images[0].numel()
    if config.per_sample:
        net: nn.Module = PerSampleAttackNet(scenario.n, n_in, config.hidden, gen.d0)
    else:
        net = AttackNet(n_in, config.hidden, gen.d0)
    for p in gen.parameters():
        p.requires_grad_(False)
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    best = np.full(scenario.n, np.inf)
    try:
        for step in range(1, config.iterations + 1):
            opt.zero_grad()
            losses = reconstruction_losses(net, gen, images, masks)
            current = losses.detach().double().numpy()
            if not np.isfinite(current).all():
                raise AttackError(f"non-finite attack loss at step {step}")
            np.minimum(best, current, out=best)
            loss = losses.mean()
            # the final step's update is never evaluated, so skip it
            if step < config.iterations and loss.requires_grad:
                loss.backward()
                opt.step()
    finally:
        for p in gen.parameters():
            p.requires_grad_(True)
    return best


def generator_attack(gen: nn.Module, scenario: AttackScenario, config: AttackNetConfig,
                     step: Optional[int] = None) -> AttackResult:
    l_min = train_attack_network(gen, scenario, config)
    return _result("generator", scenario, -l_min, step, l_min=l_min.tolist())

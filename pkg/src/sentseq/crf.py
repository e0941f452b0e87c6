"""Linear-chain CRF output layer.

Scores a label sequence as begin + per-position label scores + transition
scores + end.  The partition function uses the forward (sum-product)
recursion in log space; decoding uses the Viterbi (max-product) recursion.
Both are O(|L|^2 * n).  All arithmetic is 64-bit so that small instances
can be checked against exhaustive enumeration at tight tolerances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .errors import LengthMismatch


@dataclass
class CrfParams:
    """Transition matrix T (T[a, b] scores a -> b) plus begin/end score vectors."""

    T: torch.Tensor
    b_begin: torch.Tensor
    e_end: torch.Tensor

    @classmethod
    def init(cls, n_labels: int, gen: torch.Generator) -> "CrfParams":
        bound = 1.0 / math.sqrt(n_labels)

        def u(*shape):
            t = torch.empty(*shape, dtype=torch.float64)
            t.uniform_(-bound, bound, generator=gen)
            t.requires_grad_(True)
            return t

        return cls(T=u(n_labels, n_labels), b_begin=u(n_labels), e_end=u(n_labels))

    @property
    def n_labels(self) -> int:
        return self.T.shape[0]

    def arrays(self, prefix: str) -> dict[str, torch.Tensor]:
        return {
            f"{prefix}.crf.T": self.T,
            f"{prefix}.crf.b_begin": self.b_begin,
            f"{prefix}.crf.e_end": self.e_end,
        }


def _check_lengths(logits, labels):
    if len(labels) == 0 or logits.shape[0] != len(labels):
        raise LengthMismatch(
            f"{logits.shape[0]} logit rows vs {len(labels)} labels"
        )


def score_sequence(p: CrfParams, logits: torch.Tensor, labels) -> torch.Tensor:
    """Score of one label sequence: b_begin[y1] + sum l_t[y_t] + sum T[y_t,y_t+1] + e_end[yn]."""
    _check_lengths(logits, labels)
    y = torch.as_tensor(labels, dtype=torch.long)
    n = y.shape[0]
    s = p.b_begin[y[0]] + logits[torch.arange(n), y].sum() + p.e_end[y[-1]]
    if n > 1:
        s = s + p.T[y[:-1], y[1:]].sum()
    return s


def log_partition(p: CrfParams, logits: torch.Tensor) -> torch.Tensor:
    """log sum over all |L|^n sequences of exp(score), via the forward recursion."""
    n = logits.shape[0]
    alpha = p.b_begin + logits[0]
    for t in range(1, n):
        # alpha[i] + T[i, j], reduced over previous label i
        alpha = logits[t] + torch.logsumexp(alpha.unsqueeze(1) + p.T, dim=0)
    return torch.logsumexp(alpha + p.e_end, dim=0)


def nll_loss(p: CrfParams, logits: torch.Tensor, gold_labels) -> torch.Tensor:
    """Negative log conditional likelihood of the gold sequence (always >= 0)."""
    return log_partition(p, logits) - score_sequence(p, logits, gold_labels)


def batch_nll(p: CrfParams, pairs) -> torch.Tensor:
    """Mean NLL over (logits, gold_labels) pairs, one per document."""
    losses = [nll_loss(p, logits, labels) for logits, labels in pairs]
    return torch.stack(losses).mean()


def _as_float64(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        return x.detach().cpu().numpy().astype(np.float64)
    return np.asarray(x, dtype=np.float64)


def viterbi_decode(p: CrfParams, logits) -> tuple[list[int], float]:
    """Highest-scoring label sequence and its score.

    Ties at each backpointer choice (and at the final position) resolve to
    the lowest label index, so decoding is fully deterministic.
    """
    ell = _as_float64(logits)
    T = _as_float64(p.T)
    n, L = ell.shape
    delta = _as_float64(p.b_begin) + ell[0]
    back = np.zeros((n, L), dtype=np.intp)
    for t in range(1, n):
        scores = delta[:, None] + T
        back[t] = np.argmax(scores, axis=0)  # first max -> lowest previous index
        delta = ell[t] + scores[back[t], np.arange(L)]
    final = delta + _as_float64(p.e_end)
    last = int(np.argmax(final))
    labels = [last]
    for t in range(n - 1, 0, -1):
        labels.append(int(back[t, labels[-1]]))
    labels.reverse()
    return labels, float(final[last])

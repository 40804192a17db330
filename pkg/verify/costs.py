"""Closed-form operation counts for one co-attention pass.

The factored pass runs two attention blocks: ``N_p*K`` prototypes attend to
the ``K*HW`` support tokens, then the ``T*HW`` query tokens attend to the
refined prototypes. The full-rank pass runs one block of ``T*HW`` queries
against ``K*HW`` keys. Per block with ``n_q`` queries, ``n_k`` keys and
``C`` channels:

    linear    = C^2 (n_q + 2 n_k)
    attention = 2 n_q n_k C + n_q n_k

Self-attention has the same shape with the query frames in the support
role, so its counts are ``cost_model(T, T, ...)``.
"""
from dataclasses import dataclass

from .models import attention_macs, linear_macs


@dataclass(frozen=True)
class CostEstimate:
    factored_linear: int
    factored_attention: int
    full_linear: int
    full_attention: int

    @property
    def factored(self) -> int:
        return self.factored_linear + self.factored_attention

    @property
    def full(self) -> int:
        return self.full_linear + self.full_attention

    @property
    def attention_ratio(self) -> float:
        return self.full_attention / self.factored_attention


def cost_model(k_shots: int, t_frames: int, height: int, width: int, n_prototypes: int,
               channels: int) -> CostEstimate:
    for name, value in (('K', k_shots), ('T', t_frames), ('H', height), ('W', width),
                        ('N_p', n_prototypes), ('C', channels)):
        if int(value) < 1:
            raise ValueError(f"{name} must be a positive integer, got {value}")
    pixels = height * width
    prototypes = n_prototypes * k_shots
    support, query = k_shots * pixels, t_frames * pixels
    return CostEstimate(
        factored_linear=linear_macs(prototypes, support, channels) + linear_macs(query, prototypes, channels),
        factored_attention=attention_macs(prototypes, support, channels) + attention_macs(query, prototypes, channels),
        full_linear=linear_macs(query, support, channels),
        full_attention=attention_macs(query, support, channels),
    )

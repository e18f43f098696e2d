"""Frozen tokenization: prototypes and priors fitted on training data only."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from vsformer.dataset import MtsDataset
from vsformer.model import BranchInput, tsi_encode, tsi_width
from vsformer.priors import (
    FeatureImportanceTable,
    PrototypeWeight,
    fit_feature_importance,
    prototype_weight,
    shape_prior,
    shape_token_weight,
)
from vsformer.shape_tokenizer import (
    Prototype,
    ShapeTokenSet,
    build_shape_tokens,
    discover_prototypes,
    znormalize,
)
from vsformer.value_tokenizer import ValueTokenSet, build_value_tokens


@dataclass
class Encoded:
    """Model-ready inputs for a dataset together with the raw token sets."""

    shape: BranchInput
    value: BranchInput
    shape_tokens: ShapeTokenSet
    value_tokens: ValueTokenSet
    y: np.ndarray

    def __len__(self) -> int:
        return self.y.size


@dataclass(frozen=True)
class Tokenizer:
    V: int
    T: int
    class_names: tuple[str, ...]
    k: int
    M: int
    m: int
    alpha: float
    beta: float
    kind_code: bool
    znorm_shapes: bool
    prototypes: tuple[Prototype, ...]
    prototype_weights: tuple[PrototypeWeight, ...]
    feature_importance: FeatureImportanceTable

    @classmethod
    def fit(cls, train: MtsDataset, config) -> "Tokenizer":
        """Discover prototypes and fit every prior on ``train``."""
        m = config.motif_length(train.T)
        protos = tuple(discover_prototypes(train, config.k, m))
        if not protos:
            raise ValueError("motif discovery produced no prototypes")
        matches = build_shape_tokens(train, protos)
        weights = tuple(
            prototype_weight(matches.distance[:, j], train.y, p.klass, config.alpha)
            for j, p in enumerate(protos)
        )
        values = build_value_tokens(train, config.M)
        fi = fit_feature_importance(values.values, train.y, train.C, config.bins)
        return cls(train.V, train.T, train.class_names, config.k, config.M, m, config.alpha,
                   config.beta, config.tsi_kind_code, config.znorm_shape_tokens, protos, weights, fi)

    @property
    def n_shape_tokens(self) -> int:
        return len(self.prototypes)

    @property
    def n_value_tokens(self) -> int:
        return self.feature_importance.n_positions

    @property
    def tsi_width(self) -> int:
        return tsi_width(self.V, self.kind_code)

    def check(self, d: MtsDataset) -> None:
        if (d.V, d.T) != (self.V, self.T):
            raise ValueError(f"dataset is V={d.V}, T={d.T}; tokenizer was fitted on V={self.V}, T={self.T}")
        if tuple(d.class_names) != tuple(self.class_names):
            raise ValueError(f"class vocabulary {d.class_names} does not match {self.class_names}")

    def encode(self, d: MtsDataset) -> Encoded:
        self.check(d)
        st = build_shape_tokens(d, self.prototypes)
        w_proto = np.array([w.weight for w in self.prototype_weights])
        s_prior = shape_prior(w_proto[None, :], shape_token_weight(st.distance, self.beta))
        s_tsi = tsi_encode(st.variable[None, :], st.start, st.end, s_prior, self.V, self.T)
        s_tok = znormalize(st.values) if self.znorm_shapes else st.values

        vt = build_value_tokens(d, self.M)
        fi = np.broadcast_to(self.feature_importance.importance, vt.values.shape)
        kind = vt.kind if self.kind_code else None
        v_tsi = tsi_encode(vt.variable, vt.start, vt.end, self.feature_importance.importance, self.V, self.T, kind)
        v_tsi = np.broadcast_to(v_tsi, (d.N,) + v_tsi.shape)
        return Encoded(
            BranchInput(s_tok, s_tsi, s_prior),
            BranchInput(vt.values[..., None], np.ascontiguousarray(v_tsi), np.ascontiguousarray(fi)),
            st,
            vt,
            d.y.copy(),
        )

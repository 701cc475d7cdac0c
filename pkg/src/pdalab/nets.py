"""Network definitions: feature extractor, classifier, and the
multi-head domain discriminator with an optional shared trunk.

The discriminator owns one logistic head per source class; each head
estimates the probability that a sample is from the source domain,
conditioned on that class's alignment task.  With ``shared_trunk``
off, every head owns a private copy of the trunk instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    DimensionError,
    Tensor,
    add,
    concat_cols,
    grad_reverse,
    matmul,
    relu,
    sigmoid,
    softmax_rows,
)

ACTIVATIONS = ("relu", "none")


class MLP:
    """Chain of (weight, bias, activation) layers."""

    def __init__(self, layers: list[tuple[Tensor, Tensor, str]]):
        for w, b, act in layers:
            if w.data.ndim != 2 or b.data.ndim != 1 or w.shape[1] != b.shape[0]:
                raise DimensionError("layer weight/bias shapes inconsistent")
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        for (w1, _, _), (w2, _, _) in zip(layers, layers[1:]):
            if w1.shape[1] != w2.shape[0]:
                raise DimensionError("consecutive layer dimensions do not chain")
        self.layers = layers

    @property
    def in_dim(self) -> int | None:
        return self.layers[0][0].shape[0] if self.layers else None

    @property
    def out_dim(self) -> int | None:
        return self.layers[-1][0].shape[1] if self.layers else None

    def forward(self, x: Tensor) -> Tensor:
        h = x
        for w, b, act in self.layers:
            h = add(matmul(h, w), b)
            if act == "relu":
                h = relu(h)
        return h

    def parameters(self) -> list[Tensor]:
        return [t for w, b, _ in self.layers for t in (w, b)]

    def copy(self) -> "MLP":
        layers = [(Tensor(w.data.copy(), requires_grad=True),
                   Tensor(b.data.copy(), requires_grad=True), act)
                  for w, b, act in self.layers]
        return MLP(layers)


class MultiTaskDiscriminator:
    """Per-class domain discriminators over a (possibly shared) trunk."""

    def __init__(self, trunks: list[MLP], heads: list[MLP], shared_trunk: bool):
        if shared_trunk and len(trunks) != 1:
            raise ValueError("shared discriminator requires exactly one trunk")
        if not shared_trunk and len(trunks) != len(heads):
            raise ValueError("private-trunk discriminator requires one trunk per head")
        for head in heads:
            if head.out_dim != 1:
                raise DimensionError("each discriminator head must emit one logit")
        self.trunks = trunks
        self.heads = heads
        self.shared_trunk = shared_trunk

    @property
    def num_heads(self) -> int:
        return len(self.heads)

    def forward(self, features: Tensor, lam: float) -> Tensor:
        """Per-head source-domain probabilities, shape [m, num_heads].

        Features pass through gradient reversal scaled by ``lam`` before
        the trunk, so one descent step trains the discriminator while
        pushing the feature extractor the opposite way.
        """
        reversed_f = grad_reverse(features, lam)
        if self.shared_trunk:
            h = self.trunks[0].forward(reversed_f)
            logits = [head.forward(h) for head in self.heads]
        else:
            logits = [head.forward(trunk.forward(reversed_f))
                      for trunk, head in zip(self.trunks, self.heads)]
        return sigmoid(concat_cols(logits))

    def parameters(self) -> list[Tensor]:
        params = [t for trunk in self.trunks for t in trunk.parameters()]
        params += [t for head in self.heads for t in head.parameters()]
        return params


@dataclass
class ModelBundle:
    """Feature extractor, softmax classifier, and domain discriminator."""

    features: MLP
    classifier: MLP
    discriminator: MultiTaskDiscriminator
    num_classes: int

    def __post_init__(self):
        if self.classifier.out_dim != self.num_classes:
            raise DimensionError("classifier output width must equal the class count")
        feat_dim = self.features.out_dim
        if feat_dim is not None and self.classifier.in_dim != feat_dim:
            raise DimensionError("classifier input width must match the feature width")

    def parameters(self) -> list[Tensor]:
        return (self.features.parameters() + self.classifier.parameters()
                + self.discriminator.parameters())


@dataclass(frozen=True)
class ArchSpec:
    """Widths of the three networks; heads and sharing are chosen at build time."""

    in_dim: int
    num_classes: int
    hidden: tuple[int, ...] = (16, 16)
    disc_hidden: tuple[int, ...] = ()

    def __post_init__(self):
        if self.in_dim < 1 or self.num_classes < 1:
            raise ValueError("in_dim and num_classes must be positive")
        if any(h < 1 for h in self.hidden) or any(h < 1 for h in self.disc_hidden):
            raise ValueError("hidden widths must be positive")

    @property
    def feature_dim(self) -> int:
        return self.hidden[-1] if self.hidden else self.in_dim


def _init_mlp(dims: list[int], activations: list[str], rng: np.random.Generator) -> MLP:
    # Fan-in-scaled uniform: variance 2/fan_in, the relu-friendly choice.
    layers = []
    for fan_in, fan_out, act in zip(dims, dims[1:], activations):
        bound = np.sqrt(6.0 / fan_in)
        w = Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True)
        b = Tensor(np.zeros(fan_out), requires_grad=True)
        layers.append((w, b, act))
    return MLP(layers)


def init_bundle(arch: ArchSpec, rng: np.random.Generator, *,
                num_heads: int | None = None, shared_trunk: bool = True) -> ModelBundle:
    """Build and initialize all three networks; deterministic given ``rng``.

    Draw order is fixed: feature layers, classifier, discriminator
    trunk(s), discriminator heads.
    """
    heads = arch.num_classes if num_heads is None else num_heads
    if heads < 1:
        raise ValueError("discriminator needs at least one head")
    f_dims = [arch.in_dim, *arch.hidden]
    features = _init_mlp(f_dims, ["relu"] * len(arch.hidden), rng)
    classifier = _init_mlp([arch.feature_dim, arch.num_classes], ["none"], rng)
    trunk_dims = [arch.feature_dim, *arch.disc_hidden]
    trunk_acts = ["relu"] * len(arch.disc_hidden)
    n_trunks = 1 if shared_trunk else heads
    trunks = [_init_mlp(trunk_dims, trunk_acts, rng) for _ in range(n_trunks)]
    head_in = arch.disc_hidden[-1] if arch.disc_hidden else arch.feature_dim
    head_mlps = [_init_mlp([head_in, 1], ["none"], rng) for _ in range(heads)]
    disc = MultiTaskDiscriminator(trunks, head_mlps, shared_trunk)
    return ModelBundle(features, classifier, disc, arch.num_classes)


def f_forward(features: MLP, x) -> Tensor:
    """Feature extractor pass; accepts a Tensor or a raw [m, d] array."""
    xt = x if isinstance(x, Tensor) else Tensor(np.atleast_2d(np.asarray(x, dtype=np.float64)))
    if features.in_dim is not None and xt.shape[1] != features.in_dim:
        raise DimensionError(f"input width {xt.shape[1]} != extractor width {features.in_dim}")
    return features.forward(xt)


def g_forward(classifier: MLP, f: Tensor) -> Tensor:
    """Class predictions on the simplex (softmax over the class logits)."""
    if f.shape[1] != classifier.in_dim:
        raise DimensionError(f"feature width {f.shape[1]} != classifier width {classifier.in_dim}")
    return softmax_rows(classifier.forward(f))


def d_forward(disc: MultiTaskDiscriminator, f: Tensor, lam: float) -> Tensor:
    return disc.forward(f, lam)


def unshare_trunk(disc: MultiTaskDiscriminator) -> MultiTaskDiscriminator:
    """Private-trunk discriminator whose trunks are copies of the shared one."""
    if not disc.shared_trunk:
        raise ValueError("discriminator trunk is already private")
    trunks = [disc.trunks[0].copy() for _ in disc.heads]
    heads = [head.copy() for head in disc.heads]
    return MultiTaskDiscriminator(trunks, heads, shared_trunk=False)


# ---------------------------------------------------------------------------
# Snapshot serialization (JSON-ready nested lists; floats round-trip exactly)
# ---------------------------------------------------------------------------

def _mlp_state(mlp: MLP) -> list[dict]:
    return [{"w": w.data.tolist(), "b": b.data.tolist(), "act": act}
            for w, b, act in mlp.layers]


def _mlp_from_state(state: list[dict]) -> MLP:
    layers = [(Tensor(np.asarray(layer["w"]), requires_grad=True),
               Tensor(np.asarray(layer["b"]), requires_grad=True), layer["act"])
              for layer in state]
    return MLP(layers)


def bundle_state(bundle: ModelBundle) -> dict:
    return {
        "num_classes": bundle.num_classes,
        "features": _mlp_state(bundle.features),
        "classifier": _mlp_state(bundle.classifier),
        "discriminator": {
            "shared_trunk": bundle.discriminator.shared_trunk,
            "trunks": [_mlp_state(t) for t in bundle.discriminator.trunks],
            "heads": [_mlp_state(h) for h in bundle.discriminator.heads],
        },
    }


def bundle_from_state(state: dict) -> ModelBundle:
    disc_state = state["discriminator"]
    disc = MultiTaskDiscriminator(
        [_mlp_from_state(t) for t in disc_state["trunks"]],
        [_mlp_from_state(h) for h in disc_state["heads"]],
        bool(disc_state["shared_trunk"]))
    return ModelBundle(_mlp_from_state(state["features"]),
                       _mlp_from_state(state["classifier"]),
                       disc, int(state["num_classes"]))

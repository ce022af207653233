"""Parameter-producing heads, losses, and the training loop.

Two parameterization modes: "direct" optimizes raw per-element arrays, "mlp"
runs a neighborhood feature layer (shared two-layer MLP over (x_i, x_j - x_i)
pairs, channel-wise max over k nearest neighbors) followed by per-family
linear read-outs. Read-out layers are zero-initialized so the untrained head
reproduces the unmodified operator exactly.

Everything is hand-backpropagated numpy; the finite-difference suite in the
tests is the authority on every backward rule here.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .adjoint import (
    GradientBundle,
    clip_gradients,
    hks_pullback,
    reverse_gradient,
)
from .assembly import AssembledOperator, OperatorParams, modified_operator
from .curvature import curvature_frames
from .descriptors import Descriptor, hks, log_time_samples
from .eigen import EigenSolveError, solve_gep
from .features import element_coordinates, interpolate_to_edges, interpolate_to_faces, intrinsic_features
from .meshio import Mesh

MODULES = ("riemann", "albo", "albo_plus", "voronoi")

#: Operator-parameter families driven by each module.
MODULE_FAMILIES = {
    "riemann": ("edge",),
    "voronoi": ("vertex",),
    "albo": ("a2", "theta"),
    "albo_plus": ("a1", "a2", "theta"),
}

#: Element kind each module's raw outputs live on, and their channel count.
MODULE_ELEMENTS = {
    "riemann": ("edge", 1),
    "voronoi": ("vertex", 1),
    "albo": ("face", 2),
    "albo_plus": ("face", 3),
}

LEAKY_SLOPE = 0.01


class TrainDivergenceError(RuntimeError):
    """Loss increased too many consecutive steps."""


@dataclass(frozen=True)
class HeadConfig:
    """Which modules are learned and how the shared layers are shaped."""

    mode: str = "direct"                       # direct | mlp
    modules: tuple = ("riemann",)
    knn: int = 20
    widths: tuple = (32, 32)
    leaky_slope: float = LEAKY_SLOPE
    normalize_features: bool = True
    aggregation: str = "max"                   # max | mean

    def __post_init__(self):
        if self.mode not in ("direct", "mlp"):
            raise ValueError(f"unknown head mode {self.mode!r}")
        unknown = set(self.modules) - set(MODULES)
        if unknown:
            raise ValueError(f"unknown modules {sorted(unknown)}")
        if "albo" in self.modules and "albo_plus" in self.modules:
            raise ValueError("albo and albo_plus are mutually exclusive")
        if self.knn < 1:
            raise ValueError("knn must be >= 1")
        if self.aggregation not in ("max", "mean"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")

    @property
    def anisotropic(self) -> bool:
        return bool({"albo", "albo_plus"} & set(self.modules))


@dataclass
class MlpParams:
    """Flat named-array parameter store plus non-optimized running stats."""

    arrays: dict = field(default_factory=dict)
    running: dict = field(default_factory=dict)

    def copy(self) -> "MlpParams":
        return MlpParams(
            arrays={k: v.copy() for k, v in self.arrays.items()},
            running={k: v.copy() for k, v in self.running.items()},
        )


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "spectral_alignment"
    lr: float | None = None                    # default 1e-2 direct, 1e-3 mlp
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    epochs: int = 1
    clip_tau: float = 1.0
    k: int = 32
    skip: int = 1
    seed: int = 0
    band: tuple | None = None                  # retained-index slice (lo, hi)
    margin: float = 0.3
    n_classes: int = 2
    weight_decay: float = 0.0
    normalize_hks: bool = True
    lr_schedule: str = "constant"              # constant | linear

    @property
    def _known_schedules(self):
        return ("constant", "linear")
    hks_times: int = 16
    max_consecutive_increases: int = 25
    pretrain_then_finetune: bool = False

    def __post_init__(self):
        known = ("segmentation_ce", "triplet", "spectral_alignment",
                 "descriptor_distance")
        if self.loss not in known:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.lr is not None and self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr_schedule not in ("constant", "linear"):
            raise ValueError(f"unknown lr schedule {self.lr_schedule!r}")


# ---------------------------------------------------------------------------
# layers


def knn_indices(coords: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k Euclidean nearest neighbors per row, self excluded.

    Ties are broken by index (stable sort) so the graph is deterministic.
    """
    n = len(coords)
    if k >= n:
        raise ValueError(f"k = {k} needs at least {k + 1} elements, got {n}")
    d2 = ((coords[:, None, :] - coords[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    order = np.argsort(d2, axis=1, kind="stable")
    return order[:, :k]


def init_linear(rng, n_in: int, n_out: int, zero: bool = False):
    if zero:
        W = np.zeros((n_in, n_out))
    else:
        W = rng.standard_normal((n_in, n_out)) * np.sqrt(2.0 / n_in)
    return W, np.zeros(n_out)


def _leaky(x, slope):
    return np.where(x >= 0, x, slope * x)


def _leaky_back(x, g, slope):
    return np.where(x >= 0, g, slope * g)


def _bn_forward(x, gamma, beta, running_mean, running_var, training, momentum=0.1):
    """Normalization over the element axis; one mesh is one batch."""
    if training:
        mu = x.mean(axis=0)
        var = x.var(axis=0)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + 1e-5)
    xhat = (x - mu) * inv
    out = gamma * xhat + beta
    return out, (xhat, inv, gamma, training)


def _bn_backward(cache, g):
    xhat, inv, gamma, training = cache
    g_gamma = (g * xhat).sum(axis=0)
    g_beta = g.sum(axis=0)
    gx = g * gamma
    if training:
        m = len(xhat)
        gx = inv * (gx - gx.mean(axis=0) - xhat * (gx * xhat).mean(axis=0))
    else:
        gx = gx * inv
    return gx, g_gamma, g_beta


def edgeconv_forward(
    coords: np.ndarray,
    feats: np.ndarray,
    config: HeadConfig,
    params: MlpParams,
    prefix: str,
    training: bool = True,
):
    """Shared-MLP edge function over (x_i, x_j - x_i), aggregated per element.

    Returns the (n, widths[-1]) output and the cache for the backward pass.
    """
    nbr = knn_indices(coords, config.knn)          # (n, k)
    n, k = nbr.shape
    diff = feats[nbr] - feats[:, None, :]          # (n, k, F)
    z = np.concatenate(
        [np.broadcast_to(feats[:, None, :], diff.shape), diff], axis=2
    ).reshape(n * k, 2 * feats.shape[1])

    caches = []
    x = z
    for li in range(len(config.widths)):
        W = params.arrays[f"{prefix}/l{li}/W"]
        b = params.arrays[f"{prefix}/l{li}/b"]
        pre = x @ W + b
        bn_out, bn_cache = _bn_forward(
            pre,
            params.arrays[f"{prefix}/l{li}/gamma"],
            params.arrays[f"{prefix}/l{li}/beta"],
            params.running[f"{prefix}/l{li}/mean"],
            params.running[f"{prefix}/l{li}/var"],
            training,
        )
        act = _leaky(bn_out, config.leaky_slope)
        caches.append((x, W, bn_cache, bn_out))
        x = act

    pair = x.reshape(n, k, -1)
    if config.aggregation == "max":
        arg = pair.argmax(axis=1)                  # (n, C)
        out = np.take_along_axis(pair, arg[:, None, :], axis=1)[:, 0, :]
    else:
        arg = None
        out = pair.mean(axis=1)
    return out, (nbr, feats.shape[1], caches, arg, pair.shape)


def edgeconv_backward(g_out, cache, config, params, prefix, grads):
    """Accumulate parameter grads into ``grads``; returns grad on the input
    features (both the center and the gathered-neighbor paths)."""
    nbr, n_feat, caches, arg, pair_shape = cache
    n, k, C = pair_shape
    g_pair = np.zeros(pair_shape)
    if config.aggregation == "max":
        np.put_along_axis(g_pair, arg[:, None, :], g_out[:, None, :], axis=1)
    else:
        g_pair[:] = g_out[:, None, :] / k
    g = g_pair.reshape(n * k, C)

    for li in reversed(range(len(config.widths))):
        x_in, W, bn_cache, bn_out = caches[li]
        g = _leaky_back(bn_out, g, config.leaky_slope)
        g, g_gamma, g_beta = _bn_backward(bn_cache, g)
        grads[f"{prefix}/l{li}/gamma"] = grads.get(f"{prefix}/l{li}/gamma", 0) + g_gamma
        grads[f"{prefix}/l{li}/beta"] = grads.get(f"{prefix}/l{li}/beta", 0) + g_beta
        grads[f"{prefix}/l{li}/W"] = grads.get(f"{prefix}/l{li}/W", 0) + x_in.T @ g
        grads[f"{prefix}/l{li}/b"] = grads.get(f"{prefix}/l{li}/b", 0) + g.sum(axis=0)
        g = g @ W.T

    g_z = g.reshape(n, k, 2 * n_feat)
    g_center = g_z[:, :, :n_feat]
    g_diff = g_z[:, :, n_feat:]
    g_feats = (g_center - g_diff).sum(axis=1)
    np.add.at(g_feats, nbr.ravel(), g_diff.reshape(-1, n_feat))
    return g_feats


# ---------------------------------------------------------------------------
# heads


def init_head(mesh: Mesh, config: HeadConfig, seed: int = 0) -> MlpParams:
    """Identity-at-initialization parameters for either mode."""
    rng = np.random.default_rng(seed)
    params = MlpParams()
    if config.mode == "direct":
        for mod in config.modules:
            kind, channels = MODULE_ELEMENTS[mod]
            n = {"edge": mesh.n_edges, "vertex": mesh.n_vertices,
                 "face": mesh.n_faces}[kind]
            params.arrays[f"direct/{mod}"] = np.zeros((n, channels))
        return params

    n_feat = 4  # curvature feature channels
    for mod in config.modules:
        kind, channels = MODULE_ELEMENTS[mod]
        prefix = f"{mod}/{kind}"
        n_in = 2 * n_feat
        for li, width in enumerate(config.widths):
            W, b = init_linear(rng, n_in, width)
            params.arrays[f"{prefix}/l{li}/W"] = W
            params.arrays[f"{prefix}/l{li}/b"] = b
            params.arrays[f"{prefix}/l{li}/gamma"] = np.ones(width)
            params.arrays[f"{prefix}/l{li}/beta"] = np.zeros(width)
            params.running[f"{prefix}/l{li}/mean"] = np.zeros(width)
            params.running[f"{prefix}/l{li}/var"] = np.ones(width)
            n_in = width
        W, b = init_linear(rng, n_in, channels, zero=True)
        params.arrays[f"{prefix}/out/W"] = W
        params.arrays[f"{prefix}/out/b"] = b
    return params


def _raw_to_operator(mesh: Mesh, config: HeadConfig, raw: dict):
    """Apply the per-module constraint maps to raw head outputs."""
    op = OperatorParams.identity(mesh)
    aniso = op.face_aniso.copy()
    edge = op.edge_log_scale
    vertex = op.vertex_log_weight
    for mod in config.modules:
        r = raw[mod]
        if mod == "riemann":
            edge = r[:, 0]
        elif mod == "voronoi":
            vertex = r[:, 0]
        elif mod == "albo":
            aniso[:, 1] = np.exp(r[:, 0])
            aniso[:, 2] = r[:, 1]
        elif mod == "albo_plus":
            aniso[:, 0] = np.exp(r[:, 0])
            aniso[:, 1] = np.exp(r[:, 1])
            aniso[:, 2] = r[:, 2]
    return OperatorParams(
        edge_log_scale=edge, face_aniso=aniso, vertex_log_weight=vertex
    )


def _bundle_to_raw_grads(config: HeadConfig, raw: dict, bundle: GradientBundle):
    """Chain operator-parameter grads back through the constraint maps."""
    out = {}
    for mod in config.modules:
        r = raw[mod]
        g = np.zeros_like(r)
        if mod == "riemann":
            g[:, 0] = bundle.edge
        elif mod == "voronoi":
            g[:, 0] = bundle.vertex
        elif mod == "albo":
            g[:, 0] = bundle.a2 * np.exp(r[:, 0])
            g[:, 1] = bundle.theta
        elif mod == "albo_plus":
            g[:, 0] = bundle.a1 * np.exp(r[:, 0])
            g[:, 1] = bundle.a2 * np.exp(r[:, 1])
            g[:, 2] = bundle.theta
        out[mod] = g
    return out


def head_forward(
    mesh: Mesh,
    config: HeadConfig,
    params: MlpParams,
    features=None,
    training: bool = True,
):
    """Produce OperatorParams from the head; returns (params, raw, cache)."""
    raw = {}
    cache = {}
    if config.mode == "direct":
        for mod in config.modules:
            raw[mod] = params.arrays[f"direct/{mod}"]
        return _raw_to_operator(mesh, config, raw), raw, cache

    if features is None:
        features = intrinsic_features(
            mesh, standardized=config.normalize_features
        )
    by_kind = {"vertex": features}
    for mod in config.modules:
        kind, _ = MODULE_ELEMENTS[mod]
        if kind not in by_kind:
            if kind == "edge":
                by_kind[kind] = interpolate_to_edges(mesh, features)
            else:
                by_kind[kind] = interpolate_to_faces(mesh, features)
        feats = by_kind[kind].values
        coords = element_coordinates(mesh, kind)
        prefix = f"{mod}/{kind}"
        h, ec_cache = edgeconv_forward(
            coords, feats, config, params, prefix, training
        )
        W = params.arrays[f"{prefix}/out/W"]
        b = params.arrays[f"{prefix}/out/b"]
        raw[mod] = h @ W + b
        cache[mod] = (h, ec_cache, prefix)
    return _raw_to_operator(mesh, config, raw), raw, cache


def head_backward(config: HeadConfig, params: MlpParams, raw, cache, bundle):
    """Gradients of the loss with respect to every head parameter."""
    raw_grads = _bundle_to_raw_grads(config, raw, bundle)
    grads = {}
    if config.mode == "direct":
        for mod in config.modules:
            grads[f"direct/{mod}"] = raw_grads[mod]
        return grads
    for mod in config.modules:
        h, ec_cache, prefix = cache[mod]
        g_raw = raw_grads[mod]
        W = params.arrays[f"{prefix}/out/W"]
        grads[f"{prefix}/out/W"] = h.T @ g_raw
        grads[f"{prefix}/out/b"] = g_raw.sum(axis=0)
        edgeconv_backward(g_raw @ W.T, ec_cache, config, params, prefix, grads)
    return grads


# ---------------------------------------------------------------------------
# losses


def loss_spectral_alignment(lam_a, lam_b, band=None):
    """Sum of squared eigenvalue gaps over a retained-index band.

    Returns (loss, dL/dlam_a).
    """
    lam_a = np.asarray(lam_a, dtype=np.float64)
    lam_b = np.asarray(lam_b, dtype=np.float64)
    if lam_a.shape != lam_b.shape:
        raise ValueError("spectra must have equal length")
    mask = np.zeros(len(lam_a), dtype=bool)
    if band is None:
        mask[:] = True
    else:
        mask[band[0]:band[1]] = True
    diff = np.where(mask, lam_a - lam_b, 0.0)
    return float((diff**2).sum()), 2.0 * diff


def loss_triplet(desc_values, anchor, positive, negative, margin=0.3):
    """Euclidean triplet hinge over descriptor rows; zero grad when inactive."""
    a = desc_values[anchor]
    dp = a - desc_values[positive]
    dn = a - desc_values[negative]
    d_ap = float(np.linalg.norm(dp))
    d_an = float(np.linalg.norm(dn))
    loss = d_ap - d_an + margin
    g = np.zeros_like(desc_values)
    if loss <= 0:
        return 0.0, g
    if d_ap > 0:
        g[anchor] += dp / d_ap
        g[positive] -= dp / d_ap
    if d_an > 0:
        g[anchor] -= dn / d_an
        g[negative] += dn / d_an
    return loss, g


def loss_descriptor_distance(desc_a, desc_b):
    """Mean squared row-wise difference; cotangent on the first descriptor."""
    if desc_a.shape != desc_b.shape:
        raise ValueError("descriptors must have equal shape")
    diff = desc_a - desc_b
    n = desc_a.shape[0]
    return float((diff**2).sum() / n), 2.0 * diff / n


def softmax_cross_entropy(logits, labels):
    """Mean CE over rows. Returns (loss, dL/dlogits)."""
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    p = ez / ez.sum(axis=1, keepdims=True)
    n = len(labels)
    loss = float(-np.log(p[np.arange(n), labels] + 1e-300).mean())
    g = p.copy()
    g[np.arange(n), labels] -= 1.0
    return loss, g / n


def init_classifier(rng, n_in, n_hidden, n_classes):
    W0, b0 = init_linear(rng, n_in, n_hidden)
    W1, b1 = init_linear(rng, n_hidden, n_classes)
    return {"clf/W0": W0, "clf/b0": b0, "clf/W1": W1, "clf/b1": b1}


def classifier_forward(x, params):
    pre = x @ params["clf/W0"] + params["clf/b0"]
    h = _leaky(pre, LEAKY_SLOPE)
    logits = h @ params["clf/W1"] + params["clf/b1"]
    return logits, (x, pre, h)


def classifier_backward(g_logits, cache, params, grads):
    x, pre, h = cache
    grads["clf/W1"] = grads.get("clf/W1", 0) + h.T @ g_logits
    grads["clf/b1"] = grads.get("clf/b1", 0) + g_logits.sum(axis=0)
    gh = g_logits @ params["clf/W1"].T
    gh = _leaky_back(pre, gh, LEAKY_SLOPE)
    grads["clf/W0"] = grads.get("clf/W0", 0) + x.T @ gh
    grads["clf/b0"] = grads.get("clf/b0", 0) + gh.sum(axis=0)
    return gh @ params["clf/W0"].T


def loss_segmentation(desc: Descriptor, clf_params, labels):
    """Shared-MLP classifier over descriptor rows + mean cross-entropy.

    Returns (loss, dL/ddescriptor, classifier grads, accuracy).
    """
    logits, cache = classifier_forward(desc.values, clf_params)
    loss, g_logits = softmax_cross_entropy(logits, labels)
    grads = {}
    g_desc = classifier_backward(g_logits, cache, clf_params, grads)
    acc = float((logits.argmax(axis=1) == labels).mean())
    return loss, g_desc, grads, acc


def hks_features(eigs, times, normalize: bool):
    """Heat signature rows, optionally row-normalized to unit sum.

    Normalization makes the classifier input invariant to per-vertex scale,
    so mass reweighting cannot trivially imprint labels. Returns the feature
    descriptor and the pullback mapping dL/d(feature) to dL/d(raw HKS).
    """
    desc = hks(eigs, times)
    if not normalize:
        return desc, lambda g: g
    row = desc.values.sum(axis=1, keepdims=True)
    vals = desc.values / row

    def pullback(g):
        return g / row - (g * vals).sum(axis=1, keepdims=True) / row

    return Descriptor(values=vals, kind="hks_normalized", meta=desc.meta), pullback


def average_pool(desc: Descriptor, weights=None) -> np.ndarray:
    """Per-channel mean over vertices, optionally mass-weighted."""
    if weights is None:
        return desc.values.mean(axis=0)
    w = np.asarray(weights, dtype=np.float64)
    return (desc.values * w[:, None]).sum(axis=0) / w.sum()


# ---------------------------------------------------------------------------
# optimizer and loop


class Adam:
    """Per-array adaptive moments over a flat name -> array dict."""

    def __init__(self, arrays, lr, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.0):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in arrays.items()}
        self.v = {k: np.zeros_like(v) for k, v in arrays.items()}

    def step(self, arrays, grads):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for name, g in grads.items():
            g = np.asarray(g, dtype=np.float64)
            m = self.m[name]
            v = self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            if self.weight_decay:
                # Decoupled decay: keeps unconstrained raw parameters from
                # drifting into extreme operator regimes.
                arrays[name] *= 1.0 - self.lr * self.weight_decay
            arrays[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def operator_families(config: HeadConfig) -> tuple:
    fams = []
    for mod in config.modules:
        fams.extend(MODULE_FAMILIES[mod])
    return tuple(dict.fromkeys(fams))


@dataclass
class TrainState:
    head: HeadConfig
    cfg: TrainConfig
    params: MlpParams
    extra: dict = field(default_factory=dict)   # classifier etc.
    log: list = field(default_factory=list)


def _forward_operator(mesh, head, params, cfg, frames, features, training):
    op_params, raw, cache = head_forward(
        mesh, head, params, features=features, training=training
    )
    mode = "anisotropic" if head.anisotropic else "isotropic"
    asm = modified_operator(mesh, op_params, mode=mode, frames=frames)
    eigs = solve_gep(asm.ops, k=min(cfg.k, asm.mesh.n_vertices - cfg.skip),
                     skip=cfg.skip)
    return asm, eigs, raw, cache


def train(meshes, targets, head: HeadConfig, cfg: TrainConfig):
    """Generic loop: head -> operator -> eigensolve -> loss -> reverse
    gradients -> clipped adaptive update.

    ``meshes`` is a list of Mesh; ``targets`` is per-mesh loss payload:
    spectral_alignment -> reference eigenvalue array, segmentation_ce ->
    integer labels, descriptor_distance -> reference descriptor values,
    triplet -> (anchor, positive, negative) index triples.
    Returns the final TrainState; state.log rows are dicts with step, loss,
    per-family grad norms, and wall time.
    """
    rng = np.random.default_rng(cfg.seed)
    lr = cfg.lr if cfg.lr is not None else (1e-2 if head.mode == "direct" else 1e-3)
    params = init_head(meshes[0], head, seed=cfg.seed)
    if head.mode == "direct" and len(meshes) > 1:
        raise ValueError("direct mode optimizes one mesh's parameters")

    state = TrainState(head=head, cfg=cfg, params=params)
    frames_by_mesh = [
        curvature_frames(m)[0] if head.anisotropic else None for m in meshes
    ]
    feats_by_mesh = [
        intrinsic_features(m, standardized=head.normalize_features)
        if head.mode == "mlp" else None
        for m in meshes
    ]
    if cfg.loss == "segmentation_ce":
        state.extra.update(
            init_classifier(rng, cfg.hks_times, 32, cfg.n_classes)
        )
    opt = Adam(params.arrays, lr, cfg.betas, cfg.adam_eps, cfg.weight_decay)
    opt_extra = Adam(state.extra, 1e-3, cfg.betas, cfg.adam_eps) if state.extra else None

    fams = operator_families(head)
    prev_loss = np.inf
    rising = 0
    step = 0
    total_steps = cfg.epochs * len(meshes)
    for _epoch in range(cfg.epochs):
        for mi, mesh in enumerate(meshes):
            t0 = time.perf_counter()
            if cfg.lr_schedule == "linear":
                f = 1.0 - 0.9 * step / max(total_steps - 1, 1)
                opt.lr = lr * f
                if opt_extra is not None:
                    opt_extra.lr = 1e-3 * f
            try:
                asm, eigs, raw, cache = _forward_operator(
                    mesh, head, params, cfg, frames_by_mesh[mi],
                    feats_by_mesh[mi], training=True,
                )
            except EigenSolveError as exc:
                state.log.append(
                    {"step": step, "loss": np.nan, "skipped": str(exc)}
                )
                step += 1
                continue

            extra_grads = {}
            acc = None
            if cfg.loss == "spectral_alignment":
                loss, glam = loss_spectral_alignment(
                    eigs.eigenvalues, targets[mi], band=cfg.band
                )
                gphi = np.zeros_like(eigs.eigenvectors)
            else:
                times = log_time_samples(eigs, cfg.hks_times)
                feat, pullback = hks_features(eigs, times, cfg.normalize_hks)
                if cfg.loss == "segmentation_ce":
                    loss, g_feat, extra_grads, acc = loss_segmentation(
                        feat, state.extra, targets[mi]
                    )
                elif cfg.loss == "descriptor_distance":
                    loss, g_feat = loss_descriptor_distance(
                        feat.values, targets[mi]
                    )
                else:
                    a, p, n_idx = targets[mi]
                    loss, g_feat = loss_triplet(
                        feat.values, a, p, n_idx, cfg.margin
                    )
                glam, gphi = hks_pullback(eigs, times, pullback(g_feat))

            if fams:
                bundle = reverse_gradient(asm, eigs, glam, gphi, families=fams)
                bundle = clip_gradients(bundle, cfg.clip_tau)
                grads = head_backward(head, params, raw, cache, bundle)
                opt.step(params.arrays, grads)
            else:
                bundle = GradientBundle.zeros(mesh)
            if opt_extra is not None and extra_grads:
                opt_extra.step(state.extra, extra_grads)

            row = {
                "step": step,
                "loss": loss,
                "wall_time": time.perf_counter() - t0,
            }
            for fam, g in bundle.items():
                row[f"gnorm_{fam}"] = float(np.linalg.norm(g))
            if acc is not None:
                row["accuracy"] = acc
            state.log.append(row)

            rising = rising + 1 if loss > prev_loss else 0
            if rising >= cfg.max_consecutive_increases:
                raise TrainDivergenceError(
                    f"loss rose {rising} consecutive steps (last {loss:.4g})"
                )
            prev_loss = loss
            step += 1
    return state


def evaluate(meshes, targets, state: TrainState):
    """Frozen-parameter pass; returns per-mesh loss (and accuracy when the
    loss defines one) plus pooled descriptors."""
    head, cfg = state.head, state.cfg
    out = []
    for mi, mesh in enumerate(meshes):
        frames = curvature_frames(mesh)[0] if head.anisotropic else None
        feats = (
            intrinsic_features(mesh, standardized=head.normalize_features)
            if head.mode == "mlp" else None
        )
        asm, eigs, _, _ = _forward_operator(
            mesh, head, state.params, cfg, frames, feats, training=False
        )
        if cfg.loss == "spectral_alignment":
            loss, _ = loss_spectral_alignment(
                eigs.eigenvalues, targets[mi], band=cfg.band
            )
            out.append({"loss": loss})
            continue
        times = log_time_samples(eigs, cfg.hks_times)
        desc, _ = hks_features(eigs, times, cfg.normalize_hks)
        row = {"pooled": average_pool(desc)}
        if cfg.loss == "segmentation_ce":
            logits, _ = classifier_forward(desc.values, state.extra)
            loss, _ = softmax_cross_entropy(logits, targets[mi])
            row["loss"] = loss
            row["accuracy"] = float((logits.argmax(axis=1) == targets[mi]).mean())
        elif cfg.loss == "descriptor_distance":
            row["loss"], _ = loss_descriptor_distance(desc.values, targets[mi])
        out.append(row)
    return out

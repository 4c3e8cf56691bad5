"""A compact, analytically differentiable surrogate interatomic potential.

The model is deliberately simple but smooth and invariant. Each atom i
gets a radial descriptor

    d_i[k] = sum_{j != i, r_ij < r_c} exp(-(r_ij - mu_k)^2 / (2 sigma^2)) * f_cut(r_ij)

with the cosine cutoff f_cut(r) = (cos(pi r / r_c) + 1) / 2 for r < r_c
and 0 beyond. The species embedding row for z_i is concatenated to d_i,
a single tanh layer maps the result to a site energy,

    e_i = w2 . tanh(W1 [d_i ; emb(z_i)] + b1) + b2,

and the total energy is E = sum_i e_i. Because the descriptor depends
only on interatomic distances, E is invariant under global translations
and rotations, and the analytic forces F_i = -dE/dr_i are
translation-compensating and rotation-equivariant by construction.

Besides energies and forces the module exposes the derivative objects
acquisition feature maps are built from: the flattened parameter
gradient of the energy (restricted to a named parameter subset), the
mixed parameter-coordinate Jacobian of the forces (central finite
differences of the analytic parameter gradient), and the pooled hidden
activations. Training minimises a Huber loss on per-atom energy and
per-component force residuals with plain mini-batch SGD.

Parameter flattening order, used everywhere a parameter subset is
materialised as a vector (feature files, the ``PFPM`` binary record):
embedding rows (row-major), hidden weights W1 (row-major), hidden bias
b1, readout weights w2, readout bias b2.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator

from .structures import LabeledStructure, Structure, as_structure
from .validation import NumericalError, ValidationError, check_option, check_positive

__all__ = [
    "DescriptorConfig",
    "ModelParams",
    "PARAM_SUBSETS",
    "energy",
    "forces",
    "energy_and_forces",
    "energy_param_gradient",
    "force_param_jacobian",
    "pooled_activations",
    "TrainingSchedule",
    "train",
    "dataset_loss",
    "save_params",
    "load_params",
    "NeuralPotential",
]

PARAM_SUBSETS = ("embeddings", "hidden", "readout", "all")

PARAMS_MAGIC = b"PFPM"
PARAMS_VERSION = 1


@dataclass(frozen=True)
class DescriptorConfig:
    """Radial-basis descriptor settings: cutoff, Gaussian centers, width (Angstrom)."""

    cutoff: float = 5.0
    centers: tuple = ()
    width: float = 0.5

    def __post_init__(self):
        check_positive(self.cutoff, "cutoff")
        check_positive(self.width, "width")
        centers = tuple(float(c) for c in self.centers) or tuple(
            np.linspace(0.5, self.cutoff, 8)
        )
        if any(b <= a for a, b in zip(centers, centers[1:])):
            raise ValidationError("radial centers must be strictly increasing")
        object.__setattr__(self, "centers", centers)

    @property
    def n_centers(self) -> int:
        return len(self.centers)


@dataclass(frozen=True)
class ModelParams:
    """Model coefficients; see the module docstring for the flattening order."""

    embeddings: np.ndarray  # (n_species, embed_dim)
    hidden_weights: np.ndarray  # (hidden_dim, n_centers + embed_dim)
    hidden_bias: np.ndarray  # (hidden_dim,)
    readout_weights: np.ndarray  # (hidden_dim,)
    readout_bias: float

    def __post_init__(self):
        emb = np.asarray(self.embeddings, dtype=np.float64)
        w1 = np.asarray(self.hidden_weights, dtype=np.float64)
        b1 = np.asarray(self.hidden_bias, dtype=np.float64)
        w2 = np.asarray(self.readout_weights, dtype=np.float64)
        if emb.ndim != 2 or w1.ndim != 2:
            raise ValidationError("embeddings and hidden_weights must be 2-d")
        h = w1.shape[0]
        if b1.shape != (h,) or w2.shape != (h,):
            raise ValidationError("hidden_bias and readout_weights must match hidden_dim")
        if w1.shape[1] <= emb.shape[1]:
            raise ValidationError(
                "hidden_weights input dim must exceed embed_dim (needs descriptor block)"
            )
        arrays = (emb, w1, b1, w2)
        if not all(np.all(np.isfinite(a)) for a in arrays) or not math.isfinite(
            self.readout_bias
        ):
            raise ValidationError("parameters contain non-finite values")
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "hidden_weights", w1)
        object.__setattr__(self, "hidden_bias", b1)
        object.__setattr__(self, "readout_weights", w2)
        object.__setattr__(self, "readout_bias", float(self.readout_bias))

    @property
    def n_species(self) -> int:
        return self.embeddings.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.embeddings.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.hidden_weights.shape[0]

    @property
    def input_dim(self) -> int:
        return self.hidden_weights.shape[1]

    @property
    def n_centers(self) -> int:
        return self.input_dim - self.embed_dim

    def subset_size(self, subset: str) -> int:
        check_option(subset, "parameter subset", PARAM_SUBSETS)
        sizes = {
            "embeddings": self.embeddings.size,
            "hidden": self.hidden_weights.size + self.hidden_bias.size,
            "readout": self.readout_weights.size + 1,
        }
        sizes["all"] = sum(sizes.values())
        return sizes[subset]

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [
                self.embeddings.ravel(),
                self.hidden_weights.ravel(),
                self.hidden_bias,
                self.readout_weights,
                [self.readout_bias],
            ]
        )

    @staticmethod
    def from_vector(vec, n_species, embed_dim, hidden_dim, input_dim) -> "ModelParams":
        vec = np.asarray(vec, dtype=np.float64)
        sizes = [
            n_species * embed_dim,
            hidden_dim * input_dim,
            hidden_dim,
            hidden_dim,
            1,
        ]
        if vec.size != sum(sizes):
            raise ValidationError(
                f"parameter vector has {vec.size} entries, expected {sum(sizes)}"
            )
        offsets = np.cumsum([0] + sizes)
        return ModelParams(
            embeddings=vec[offsets[0] : offsets[1]].reshape(n_species, embed_dim).copy(),
            hidden_weights=vec[offsets[1] : offsets[2]].reshape(hidden_dim, input_dim).copy(),
            hidden_bias=vec[offsets[2] : offsets[3]].copy(),
            readout_weights=vec[offsets[3] : offsets[4]].copy(),
            readout_bias=float(vec[offsets[4]]),
        )

    @staticmethod
    def random(
        n_species, embed_dim, hidden_dim, n_centers, seed=0
    ) -> "ModelParams":
        """Random initialisation with 1/sqrt(fan-in) weight scales."""
        rng = np.random.default_rng(seed)
        input_dim = n_centers + embed_dim
        return ModelParams(
            embeddings=0.5 * rng.standard_normal((n_species, embed_dim)),
            hidden_weights=rng.standard_normal((hidden_dim, input_dim))
            / math.sqrt(input_dim),
            hidden_bias=np.zeros(hidden_dim),
            readout_weights=rng.standard_normal(hidden_dim) / math.sqrt(hidden_dim),
            readout_bias=0.0,
        )


def _check_structure_model(params: ModelParams, cfg: DescriptorConfig, x: Structure):
    if cfg.n_centers != params.n_centers:
        raise ValidationError(
            f"descriptor has {cfg.n_centers} centers but model expects {params.n_centers}"
        )
    if np.any(x.species >= params.n_species):
        raise ValidationError(
            f"species index out of range for a {params.n_species}-species model"
        )


def _descriptor_batch(cfg: DescriptorConfig, positions):
    """Radial descriptors for a (Q, N, 3) batch of position sets.

    Returns d of shape (Q, N, K). Diagonal pairs are excluded; pairs at
    or beyond the cutoff contribute exactly zero.
    """
    q, n, _ = positions.shape
    diff = positions[:, :, None, :] - positions[:, None, :, :]
    r = np.sqrt(np.einsum("qija,qija->qij", diff, diff))
    idx = np.arange(n)
    r[:, idx, idx] = np.inf
    mask = r < cfg.cutoff
    rs = np.where(mask, r, cfg.cutoff)  # clamp so exp/cos stay benign
    fcut = 0.5 * (np.cos(np.pi * rs / cfg.cutoff) + 1.0)
    centers = np.asarray(cfg.centers)
    gauss = np.exp(-((rs[..., None] - centers) ** 2) / (2.0 * cfg.width**2))
    basis = gauss * (fcut * mask)[..., None]
    return basis.sum(axis=2)


def _forward_batch(params: ModelParams, cfg: DescriptorConfig, species, positions):
    """Shared forward pass over a (Q, N, 3) batch of the same composition.

    Returns (inputs, activations) with shapes (Q, N, m) and (Q, N, h).
    """
    d = _descriptor_batch(cfg, positions)
    emb = params.embeddings[species]  # (N, embed_dim)
    inputs = np.concatenate(
        [d, np.broadcast_to(emb, (d.shape[0],) + emb.shape)], axis=2
    )
    pre = np.einsum("hm,qnm->qnh", params.hidden_weights, inputs) + params.hidden_bias
    return inputs, np.tanh(pre)


def energy(params: ModelParams, cfg: DescriptorConfig, x) -> float:
    """Total energy in eV; invariant under global translations and rotations."""
    x = as_structure(x)
    _check_structure_model(params, cfg, x)
    _, t = _forward_batch(params, cfg, x.species, x.positions[None])
    return float(t[0].sum(axis=0) @ params.readout_weights + x.n_atoms * params.readout_bias)


def _pair_gradient_weights(params, cfg, x, t):
    """Per-pair scalar weights of the energy coordinate gradient.

    dE/dr_i = sum_{j != i} w_ij * (r_i - r_j) / r_ij with
    w_ij = (c_i + c_j) . g'(r_ij), c_i the descriptor-block sensitivity
    of the site energies.
    """
    n = x.n_atoms
    k = cfg.n_centers
    a = (1.0 - t**2) * params.readout_weights  # (N, h)
    c = a @ params.hidden_weights[:, :k]  # (N, K)
    diff = x.positions[:, None, :] - x.positions[None, :, :]
    r = np.sqrt(np.einsum("ija,ija->ij", diff, diff))
    idx = np.arange(n)
    r[idx, idx] = np.inf
    mask = r < cfg.cutoff
    rs = np.where(mask, r, cfg.cutoff)
    fcut = 0.5 * (np.cos(np.pi * rs / cfg.cutoff) + 1.0)
    dfcut = -(np.pi / (2.0 * cfg.cutoff)) * np.sin(np.pi * rs / cfg.cutoff)
    centers = np.asarray(cfg.centers)
    gauss = np.exp(-((rs[..., None] - centers) ** 2) / (2.0 * cfg.width**2))
    dgdr = gauss * (
        -((rs[..., None] - centers) / cfg.width**2) * fcut[..., None]
        + dfcut[..., None]
    )
    csum = c[:, None, :] + c[None, :, :]  # (N, N, K)
    w = np.einsum("ijk,ijk->ij", csum, dgdr) * mask
    unit = diff / np.where(mask, rs, 1.0)[..., None]
    return w, unit


def forces(params: ModelParams, cfg: DescriptorConfig, x) -> np.ndarray:
    """Analytic forces F_i = -dE/dr_i, shape (N, 3), in eV/A."""
    return energy_and_forces(params, cfg, x)[1]


def energy_and_forces(params: ModelParams, cfg: DescriptorConfig, x):
    """Energy and analytic forces from one shared forward pass."""
    x = as_structure(x)
    _check_structure_model(params, cfg, x)
    _, t = _forward_batch(params, cfg, x.species, x.positions[None])
    t = t[0]
    e = float(t.sum(axis=0) @ params.readout_weights + x.n_atoms * params.readout_bias)
    w, unit = _pair_gradient_weights(params, cfg, x, t)
    grad = np.einsum("ij,ija->ia", w, unit)
    return e, -grad


def _param_gradient_blocks(params, cfg, species, inputs, t, subset):
    """Flattened energy gradients for a (Q, ...) batch; shape (Q, P)."""
    q, n, _ = t.shape
    a = (1.0 - t**2) * params.readout_weights  # (Q, N, h)
    blocks = []
    if subset in ("embeddings", "all"):
        v = a @ params.hidden_weights[:, cfg.n_centers :]  # (Q, N, embed_dim)
        onehot = np.zeros((n, params.n_species))
        onehot[np.arange(n), species] = 1.0
        grad_emb = np.einsum("ns,qne->qse", onehot, v)
        blocks.append(grad_emb.reshape(q, -1))
    if subset in ("hidden", "all"):
        grad_w1 = np.einsum("qnh,qnm->qhm", a, inputs)
        blocks.append(grad_w1.reshape(q, -1))
        blocks.append(a.sum(axis=1))
    if subset in ("readout", "all"):
        blocks.append(t.sum(axis=1))
        blocks.append(np.full((q, 1), float(n)))
    return np.concatenate(blocks, axis=1)


def energy_param_gradient(
    params: ModelParams, subset: str, cfg: DescriptorConfig, x
) -> np.ndarray:
    """Gradient of the total energy with respect to one parameter subset.

    Flattened in the documented fixed order (embeddings, hidden weights
    row-major, hidden bias, readout weights, readout bias), restricted to
    ``subset`` in {"embeddings", "hidden", "readout", "all"}.
    """
    check_option(subset, "parameter subset", PARAM_SUBSETS)
    x = as_structure(x)
    _check_structure_model(params, cfg, x)
    inputs, t = _forward_batch(params, cfg, x.species, x.positions[None])
    return _param_gradient_blocks(params, cfg, x.species, inputs, t, subset)[0]


def force_param_jacobian(
    params: ModelParams,
    subset: str,
    cfg: DescriptorConfig,
    x,
    step: float = 1e-4,
    snap_tol: float = 1e-12,
) -> np.ndarray:
    """Mixed parameter-coordinate Jacobian J[p, i, a] = dF_ia / dtheta_p.

    Computed by central finite differences of the analytic parameter
    gradient over coordinates, so J ~ -d^2 E / dtheta dr with step
    ``step`` in Angstrom. Entries below ``snap_tol`` in magnitude are
    snapped to exactly zero; in particular the readout-bias row, whose
    gradient component is the constant atom count, comes out exactly
    zero.
    """
    check_option(subset, "parameter subset", PARAM_SUBSETS)
    check_positive(step, "step")
    x = as_structure(x)
    _check_structure_model(params, cfg, x)
    n = x.n_atoms
    displaced = np.repeat(x.positions[None], 6 * n, axis=0).reshape(n, 3, 2, n, 3)
    for i in range(n):
        for axis in range(3):
            displaced[i, axis, 0, i, axis] += step
            displaced[i, axis, 1, i, axis] -= step
    inputs, t = _forward_batch(
        params, cfg, x.species, displaced.reshape(6 * n, n, 3)
    )
    grads = _param_gradient_blocks(params, cfg, x.species, inputs, t, subset)
    grads = grads.reshape(n, 3, 2, -1)
    jac = -(grads[:, :, 0, :] - grads[:, :, 1, :]) / (2.0 * step)
    jac = np.transpose(jac, (2, 0, 1))
    if snap_tol > 0.0:
        jac[np.abs(jac) < snap_tol] = 0.0
    return jac


def pooled_activations(params: ModelParams, cfg: DescriptorConfig, x) -> np.ndarray:
    """Hidden activations pooled over atoms: sum_i tanh(W1 [d_i; emb] + b1).

    Identical (bitwise) to the readout-weight block of
    :func:`energy_param_gradient`, since the energy is linear in w2.
    """
    x = as_structure(x)
    _check_structure_model(params, cfg, x)
    _, t = _forward_batch(params, cfg, x.species, x.positions[None])
    return t[0].sum(axis=0)


# ---------------------------------------------------------------------------
# Training


@dataclass(frozen=True)
class TrainingSchedule:
    """Mini-batch SGD settings resolved from the labelled-set size."""

    batch_size: int
    learning_rate: float
    epochs: int

    @staticmethod
    def for_dataset_size(n: int) -> "TrainingSchedule":
        if n <= 0:
            raise ValidationError("dataset must be non-empty")
        if n <= 20:
            batch, lr = 1, 1e-3
        elif n <= 100:
            batch, lr = 2, 5e-3
        else:
            batch, lr = 4, 5e-3
        return TrainingSchedule(batch, lr, max(10, math.ceil(1000 * batch / n)))


def _huber(x, delta):
    ax = np.abs(x)
    return np.where(ax <= delta, 0.5 * x * x, delta * (ax - 0.5 * delta))


def _huber_grad(x, delta):
    return np.clip(x, -delta, delta)


def structure_loss(params, cfg, labeled: LabeledStructure, delta, w_energy, w_force):
    """Huber loss of one structure: per-atom energy and per-component force residuals."""
    n = labeled.n_atoms
    e_pred, f_pred = energy_and_forces(params, cfg, labeled.structure)
    le = _huber((e_pred - labeled.energy) / n, delta)
    lf = _huber(f_pred - labeled.forces, delta).mean()
    return w_energy * float(le) + w_force * float(lf)


def dataset_loss(params, cfg, dataset, delta=0.01, w_energy=10.0, w_force=10.0):
    if not dataset:
        raise ValidationError("dataset must be non-empty")
    return float(
        np.mean([structure_loss(params, cfg, s, delta, w_energy, w_force) for s in dataset])
    )


def _structure_loss_gradient(params, cfg, labeled, delta, w_energy, w_force, fd_step):
    """Parameter gradient of one structure's loss, flattened over all parameters.

    The energy term uses the analytic parameter gradient. The force term
    needs sum_ia u_ia dF_ia/dtheta with u the clipped force residuals;
    that contraction equals the parameter gradient of the directional
    coordinate derivative of E along u, evaluated here by central
    differences over a small coordinate displacement. Both displaced
    gradients and the base one come from a single batched forward.
    """
    n = labeled.n_atoms
    e_pred, f_pred = energy_and_forces(params, cfg, labeled.structure)
    de = (e_pred - labeled.energy) / n
    u = _huber_grad(f_pred - labeled.forces, delta)
    unorm = float(np.sqrt((u * u).sum()))
    e_coeff = w_energy * _huber_grad(de, delta) / n

    positions = labeled.structure.positions
    if unorm > 0.0:
        uhat = u / unorm
        batch = np.stack(
            [positions, positions + fd_step * uhat, positions - fd_step * uhat]
        )
    else:
        batch = positions[None]
    inputs, t = _forward_batch(params, cfg, labeled.structure.species, batch)
    grads = _param_gradient_blocks(
        params, cfg, labeled.structure.species, inputs, t, "all"
    )
    total = e_coeff * grads[0]
    if unorm > 0.0:
        dir_grad = (grads[1] - grads[2]) / (2.0 * fd_step)
        # dF/dtheta contracted with u is -d(grad_theta E)/d(direction u)
        total += w_force * unorm / (3.0 * n) * (-dir_grad)
    return total


def train(
    params: ModelParams,
    cfg: DescriptorConfig,
    dataset,
    schedule: TrainingSchedule | None = None,
    seed: int = 0,
    delta: float = 0.01,
    w_energy: float = 10.0,
    w_force: float = 10.0,
    fd_step: float = 1e-4,
) -> ModelParams:
    """Mini-batch SGD on the Huber energy/force loss; returns new parameters.

    The schedule defaults to the labelled-set-size rule of
    :meth:`TrainingSchedule.for_dataset_size`. Shuffling is seeded and
    the input parameters are never mutated.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValidationError("dataset must be non-empty")
    if schedule is None:
        schedule = TrainingSchedule.for_dataset_size(len(dataset))
    rng = np.random.default_rng(seed)
    theta = params.to_vector()
    dims = (params.n_species, params.embed_dim, params.hidden_dim, params.input_dim)
    current = params
    for epoch in range(schedule.epochs):
        order = rng.permutation(len(dataset))
        for lo in range(0, len(dataset), schedule.batch_size):
            batch = [dataset[i] for i in order[lo : lo + schedule.batch_size]]
            grad = np.zeros_like(theta)
            for labeled in batch:
                grad += _structure_loss_gradient(
                    current, cfg, labeled, delta, w_energy, w_force, fd_step
                )
            grad /= len(batch)
            theta -= schedule.learning_rate * grad
            if not np.all(np.isfinite(theta)):
                raise NumericalError(
                    f"training diverged to non-finite parameters at epoch {epoch}, "
                    f"learning rate {schedule.learning_rate}"
                )
            current = ModelParams.from_vector(theta, *dims)
    return current


# ---------------------------------------------------------------------------
# Parameter file format: magic PFPM, version u32, five u64 dims
# (n_species, embed_dim, n_centers, input_dim, hidden_dim), then float64
# values in the documented flattening order. Little-endian throughout.


def save_params(path, params: ModelParams):
    header = struct.pack(
        "<4sIQQQQQ",
        PARAMS_MAGIC,
        PARAMS_VERSION,
        params.n_species,
        params.embed_dim,
        params.n_centers,
        params.input_dim,
        params.hidden_dim,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(params.to_vector().astype("<f8").tobytes())


def load_params(path) -> ModelParams:
    with open(path, "rb") as fh:
        header = fh.read(struct.calcsize("<4sIQQQQQ"))
        if len(header) < struct.calcsize("<4sIQQQQQ"):
            raise ValidationError(f"{path}: truncated parameter file header")
        magic, version, n_species, embed_dim, n_centers, input_dim, hidden_dim = (
            struct.unpack("<4sIQQQQQ", header)
        )
        if magic != PARAMS_MAGIC:
            raise ValidationError(f"{path}: not a parameter file (bad magic {magic!r})")
        if version != PARAMS_VERSION:
            raise ValidationError(f"{path}: unsupported parameter file version {version}")
        if input_dim != n_centers + embed_dim:
            raise ValidationError(f"{path}: inconsistent dimensions in header")
        count = (
            n_species * embed_dim + hidden_dim * input_dim + 2 * hidden_dim + 1
        )
        payload = fh.read(8 * count)
        if len(payload) != 8 * count:
            raise ValidationError(f"{path}: truncated parameter payload")
        data = np.frombuffer(payload, dtype="<f8")
    return ModelParams.from_vector(data, n_species, embed_dim, hidden_dim, input_dim)


class NeuralPotential(BaseEstimator):
    """Estimator wrapper around the surrogate potential.

    ``fit`` always restarts from the same seeded initial parameters (the
    pretrained-analog state), so refitting on a grown labelled set is
    reproducible. Prediction methods require initialised parameters;
    :meth:`initialize` provides them without training.
    """

    def __init__(
        self,
        n_species=4,
        embed_dim=4,
        hidden_dim=16,
        descriptor=None,
        seed=0,
        delta=0.01,
        w_energy=10.0,
        w_force=10.0,
    ):
        self.n_species = n_species
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.descriptor = descriptor
        self.seed = seed
        self.delta = delta
        self.w_energy = w_energy
        self.w_force = w_force

    @property
    def cfg(self) -> DescriptorConfig:
        return self.descriptor if self.descriptor is not None else DescriptorConfig()

    def initialize(self) -> "NeuralPotential":
        """Set seeded initial parameters without training."""
        self.initial_params_ = ModelParams.random(
            self.n_species, self.embed_dim, self.hidden_dim, self.cfg.n_centers,
            seed=self.seed,
        )
        self.params_ = self.initial_params_
        return self

    def _ensure_params(self) -> ModelParams:
        if not hasattr(self, "params_"):
            self.initialize()
        return self.params_

    def fit(self, dataset, shuffle_seed=0, schedule=None) -> "NeuralPotential":
        if not hasattr(self, "initial_params_"):
            self.initialize()
        self.params_ = train(
            self.initial_params_,
            self.cfg,
            dataset,
            schedule=schedule,
            seed=shuffle_seed,
            delta=self.delta,
            w_energy=self.w_energy,
            w_force=self.w_force,
        )
        return self

    def predict_energy(self, structures) -> np.ndarray:
        params = self._ensure_params()
        return np.array([energy(params, self.cfg, s) for s in structures])

    def predict_forces(self, structures):
        params = self._ensure_params()
        return [forces(params, self.cfg, s) for s in structures]

    def predict(self, structures):
        """Energies (array) and forces (list of (N, 3) arrays)."""
        params = self._ensure_params()
        pairs = [energy_and_forces(params, self.cfg, s) for s in structures]
        return np.array([p[0] for p in pairs]), [p[1] for p in pairs]

    def label(self, structures, tags=None):
        """Teacher-style labelling: wrap structures with predicted targets."""
        energies, force_list = self.predict(structures)
        tags = tags if tags is not None else [{}] * len(energies)
        return [
            LabeledStructure(as_structure(s), e, f, tags=dict(t))
            for s, e, f, t in zip(structures, energies, force_list, tags)
        ]

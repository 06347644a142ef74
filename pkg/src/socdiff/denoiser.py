"""Noise-prediction models for the reverse process.

``NetworkDenoiser`` wraps a small residual stack of 1-D temporal
convolutions with a sinusoidal step embedding, trained with a hand-written
backward pass and Adam.  ``AnalyticGaussianDenoiser`` returns the exact
conditional mean of the noise under a Gaussian trajectory prior and serves
as a test oracle for the sampler.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .diffusion import NoiseSchedule, forward_sample, make_schedule
from .geometry import RobotModel

CHECKPOINT_FORMAT = "socdiff-checkpoint"
CHECKPOINT_VERSION = 1


class DenoiserError(ValueError):
    pass


@dataclass(frozen=True)
class DenoiserSpec:
    kind: str = "TemporalConvNet"
    hidden_channels: int = 32
    depth: int = 3
    time_embed_dim: int = 32
    kernel_size: int = 5
    dilation_base: int = 2  # block j dilates by dilation_base**j; 1 disables

    def __post_init__(self):
        if self.kind not in ("TemporalConvNet", "AnalyticGaussian"):
            raise DenoiserError(f"unknown denoiser kind {self.kind!r}")
        if min(self.hidden_channels, self.depth, self.time_embed_dim, self.kernel_size, self.dilation_base) < 1:
            raise DenoiserError("network sizes must be positive")
        if self.kernel_size % 2 == 0:
            raise DenoiserError("kernel_size must be odd")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 3000
    batch_size: int = 256
    learning_rate: float = 1e-3
    seed: int = 0
    clamp_boundaries: bool = True
    lr_final_fraction: float = 0.1  # cosine decay of the learning rate down to this fraction
    dtype: str = "float32"

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1 or self.learning_rate < 0:
            raise DenoiserError("train config values must be positive")
        if not 0.0 < self.lr_final_fraction <= 1.0:
            raise DenoiserError("lr_final_fraction must lie in (0, 1]")
        if self.dtype not in ("float32", "float64"):
            raise DenoiserError("dtype must be float32 or float64")


# ---------------------------------------------------------------------------
# layers


def _silu(x):
    sig = np.multiply(x, 0.5)
    np.tanh(sig, out=sig)
    sig *= 0.5
    sig += 0.5
    return x * sig, sig


def _silu_grad(x, sig):
    return sig * (1.0 + x * (1.0 - sig))


def timestep_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal embedding of integer steps, shape ``(B, dim)``."""
    t = np.asarray(t, dtype=float).reshape(-1)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half, 1))
    args = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((emb.shape[0], 1))], axis=1)
    return emb


def _conv(x: np.ndarray, w: np.ndarray, k: int, dil: int = 1):
    """Zero-padded 'same' dilated 1-D convolution over axis 1.

    ``w`` is ``(k * C_in, C_out)``.  Returns the output and the padded input.
    """
    b, n, c = x.shape
    pad = dil * (k // 2)
    xp = np.zeros((b, n + 2 * pad, c), dtype=x.dtype)
    xp[:, pad:pad + n] = x
    wk = w.reshape(k, c, -1)
    out = xp[:, 0:n] @ wk[0]
    for j in range(1, k):
        out += xp[:, j * dil:j * dil + n] @ wk[j]
    return out, xp


def _conv_backward(xp: np.ndarray, w: np.ndarray, dy: np.ndarray, k: int, dil: int = 1):
    b, n, c_out = dy.shape
    c = xp.shape[-1]
    pad = dil * (k // 2)
    wk = w.reshape(k, c, c_out)
    dy2 = dy.reshape(-1, c_out)
    dw = np.empty((k, c, c_out), dtype=w.dtype)
    dxp = np.zeros_like(xp)
    for j in range(k):
        s = j * dil
        dw[j] = xp[:, s:s + n].reshape(-1, c).T @ dy2
        dxp[:, s:s + n] += dy @ wk[j].T
    return dw.reshape(k * c, c_out), dxp[:, pad:pad + n]


class TemporalConvNet:
    """Residual 1-D conv stack predicting noise for ``(B, L, D)`` trajectories."""

    def __init__(self, n_waypoints: int, dim: int, spec: DenoiserSpec = DenoiserSpec(), seed: int = 0,
                 params: dict[str, np.ndarray] | None = None):
        self.n_waypoints = int(n_waypoints)
        self.dim = int(dim)
        self.spec = spec
        self.params = params if params is not None else self._init_params(np.random.default_rng(seed))

    def _init_params(self, rng) -> dict[str, np.ndarray]:
        c, e, k, d = self.spec.hidden_channels, self.spec.time_embed_dim, self.spec.kernel_size, self.dim

        def dense(n_in, n_out, scale=1.0):
            return rng.standard_normal((n_in, n_out)) * scale / np.sqrt(n_in)

        p = {
            "in_w": dense(d, c), "in_b": np.zeros(c),
            "time_w": dense(e, c), "time_b": np.zeros(c),
            "out_w": dense(c, d, 0.1), "out_b": np.zeros(d),
        }
        for j in range(self.spec.depth):
            p[f"b{j}_tw"] = dense(c, c)
            p[f"b{j}_tb"] = np.zeros(c)
            p[f"b{j}_c1w"] = dense(k * c, c)
            p[f"b{j}_c1b"] = np.zeros(c)
            p[f"b{j}_c2w"] = dense(k * c, c, 0.5)
            p[f"b{j}_c2b"] = np.zeros(c)
        return p

    def astype(self, dtype) -> "TemporalConvNet":
        return TemporalConvNet(self.n_waypoints, self.dim, self.spec,
                               params={k: v.astype(dtype) for k, v in self.params.items()})

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def forward(self, x: np.ndarray, t, keep: bool = False):
        p = self.params
        dtype = p["in_w"].dtype
        x = np.asarray(x, dtype=dtype)
        b = x.shape[0]
        t = np.broadcast_to(np.asarray(t), (b,))
        k = self.spec.kernel_size
        cache = {"x": x}
        emb = timestep_embedding(t, self.spec.time_embed_dim).astype(dtype)
        te_pre = emb @ p["time_w"] + p["time_b"]
        te, te_sig = _silu(te_pre)
        h = x @ p["in_w"] + p["in_b"]
        if keep:
            cache.update(emb=emb, te_pre=te_pre, te_sig=te_sig, te=te, blocks=[])
        for j in range(self.spec.depth):
            a1, s1 = _silu(h)
            tb = te @ p[f"b{j}_tw"] + p[f"b{j}_tb"]
            dil = self.spec.dilation_base ** j
            c1, xp1 = _conv(a1, p[f"b{j}_c1w"], k, dil)
            c1 += p[f"b{j}_c1b"] + tb[:, None, :]
            a2, s2 = _silu(c1)
            c2, xp2 = _conv(a2, p[f"b{j}_c2w"], k, dil)
            c2 += p[f"b{j}_c2b"]
            if keep:
                cache["blocks"].append((h, s1, xp1, c1, s2, xp2))
            h = h + c2
        ao, so = _silu(h)
        y = ao @ p["out_w"] + p["out_b"]
        if keep:
            cache.update(h=h, so=so, ao=ao)
            return y, cache
        return y

    def backward(self, cache, dy: np.ndarray) -> dict[str, np.ndarray]:
        p = self.params
        k = self.spec.kernel_size
        g = {}
        ao, h = cache["ao"], cache["h"]
        c = ao.shape[-1]
        g["out_w"] = ao.reshape(-1, c).T @ dy.reshape(-1, self.dim)
        g["out_b"] = dy.sum(axis=(0, 1))
        dh = (dy @ p["out_w"].T) * _silu_grad(h, cache["so"])
        dte = np.zeros_like(cache["te"])
        for j in reversed(range(self.spec.depth)):
            h_in, s1, xp1, c1, s2, xp2 = cache["blocks"][j]
            dil = self.spec.dilation_base ** j
            g[f"b{j}_c2w"], da2 = _conv_backward(xp2, p[f"b{j}_c2w"], dh, k, dil)
            g[f"b{j}_c2b"] = dh.sum(axis=(0, 1))
            dc1 = da2 * _silu_grad(c1, s2)
            dtb = dc1.sum(axis=1)
            g[f"b{j}_tw"] = cache["te"].T @ dtb
            g[f"b{j}_tb"] = dtb.sum(0)
            dte += dtb @ p[f"b{j}_tw"].T
            g[f"b{j}_c1w"], da1 = _conv_backward(xp1, p[f"b{j}_c1w"], dc1, k, dil)
            g[f"b{j}_c1b"] = dc1.sum(axis=(0, 1))
            dh = dh + da1 * _silu_grad(h_in, s1)
        dte_pre = dte * _silu_grad(cache["te_pre"], cache["te_sig"])
        g["time_w"] = cache["emb"].T @ dte_pre
        g["time_b"] = dte_pre.sum(0)
        x = cache["x"]
        g["in_w"] = x.reshape(-1, self.dim).T @ dh.reshape(-1, c)
        g["in_b"] = dh.sum(axis=(0, 1))
        return g


# ---------------------------------------------------------------------------
# denoisers


def _batched(tau_t, n_waypoints, dim):
    tau_t = np.asarray(tau_t)
    single = tau_t.ndim == 2
    x = tau_t[None] if single else tau_t
    if x.ndim != 3 or x.shape[1:] != (n_waypoints, dim):
        raise DenoiserError(f"expected trajectories of shape ({n_waypoints}, {dim}), got {tau_t.shape}")
    return x, single


class NetworkDenoiser:
    """A trained (or trainable) network together with its schedule and robot normalization."""

    def __init__(self, net: TemporalConvNet, schedule: NoiseSchedule, robot: RobotModel | None = None):
        self.net = net
        self.schedule = schedule
        self.robot = robot
        self._fast = None

    @property
    def n_waypoints(self) -> int:
        return self.net.n_waypoints

    @property
    def dim(self) -> int:
        return self.net.dim

    @property
    def spec(self) -> DenoiserSpec:
        return self.net.spec

    def predict_eps(self, tau_t, t) -> np.ndarray:
        t = self.schedule.check_step(t)
        x, single = _batched(tau_t, self.n_waypoints, self.dim)
        y = self.net.forward(x, t).astype(float)
        return y[0] if single else y

    def fast(self) -> "NetworkDenoiser":
        """Single-precision copy for inference loops."""
        if self._fast is None:
            self._fast = NetworkDenoiser(self.net.astype(np.float32), self.schedule, self.robot)
        return self._fast


@dataclass
class GaussianPrior:
    """Independent per-dimension Gaussian over waypoint sequences.

    ``cov`` is ``(L, L)`` shared by all dimensions or ``(D, L, L)``.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        n, d = self.mean.shape
        if cov.ndim == 2:
            cov = np.broadcast_to(cov, (d, n, n)).copy()
        if cov.shape != (d, n, n):
            raise DenoiserError(f"covariance shape {cov.shape} does not match mean {self.mean.shape}")
        if not np.allclose(cov, cov.transpose(0, 2, 1)):
            raise DenoiserError("covariance must be symmetric")
        self.cov = cov
        self.chol = np.linalg.cholesky(cov)  # raises LinAlgError when not PD
        self.eigval, self.eigvec = np.linalg.eigh(cov)

    @classmethod
    def smooth(cls, mean: np.ndarray, length_scale: float = 8.0, variance: float = 0.25, jitter: float = 1e-3):
        """Squared-exponential covariance over waypoint index."""
        mean = np.asarray(mean, dtype=float)
        idx = np.arange(mean.shape[0])
        cov = variance * np.exp(-0.5 * ((idx[:, None] - idx[None, :]) / length_scale) ** 2)
        return cls(mean, cov + jitter * np.eye(len(idx)))


def sample_prior(prior: GaussianPrior, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """mean + chol @ z per dimension; ``n`` draws give shape ``(n, L, D)``."""
    shape = prior.mean.shape if n is None else (n,) + prior.mean.shape
    z = rng.standard_normal(shape)
    # chol: (D, L, L); z[..., l, d]
    x = np.einsum("dij,...jd->...id", prior.chol, z)
    return prior.mean + x


class AnalyticGaussianDenoiser:
    """Exact E[eps | tau_t] when tau_0 follows a :class:`GaussianPrior`."""

    def __init__(self, prior: GaussianPrior, schedule: NoiseSchedule):
        self.prior = prior
        self.schedule = schedule
        self.spec = DenoiserSpec(kind="AnalyticGaussian")

    @property
    def n_waypoints(self) -> int:
        return self.prior.mean.shape[0]

    @property
    def dim(self) -> int:
        return self.prior.mean.shape[1]

    def predict_eps(self, tau_t, t) -> np.ndarray:
        t = self.schedule.check_step(t)
        x, single = _batched(tau_t, self.n_waypoints, self.dim)
        ab = self.schedule.alpha_bar_at(t)
        r = x - np.sqrt(ab) * self.prior.mean
        v, s = self.prior.eigvec, self.prior.eigval  # (D, L, L), (D, L)
        # (ab * Sigma + (1 - ab) I)^-1 r, per dimension in the eigenbasis
        coef = np.einsum("dji,bjd->bid", v, r) / (ab * s.T + (1.0 - ab))
        out = np.sqrt(1.0 - ab) * np.einsum("dij,bjd->bid", v, coef)
        return out[0] if single else out


def predict_eps(model, tau_t, t) -> np.ndarray:
    return model.predict_eps(tau_t, t)


# ---------------------------------------------------------------------------
# training


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k in sorted(params):
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def denoising_loss(net: TemporalConvNet, x0, t, noise, schedule: NoiseSchedule, grad: bool = True,
                   clamp_boundaries: bool = False):
    """Mean squared error of the noise prediction and, optionally, its parameter gradients.

    With ``clamp_boundaries`` the first and last waypoints of the noisy input
    are replaced by their clean values, as the sampler does at inference, and
    the error is averaged over interior waypoints only.
    """
    x0 = np.asarray(x0)
    ab = schedule.alpha_bar[np.asarray(t) - 1][:, None, None].astype(x0.dtype)
    xt = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise
    if clamp_boundaries:
        xt[:, 0], xt[:, -1] = x0[:, 0], x0[:, -1]
    y = net.forward(xt, t, keep=grad)
    if grad:
        y, cache = y
    diff = y - noise
    if clamp_boundaries:
        diff[:, 0] = 0.0
        diff[:, -1] = 0.0
        count = diff.shape[0] * (diff.shape[1] - 2) * diff.shape[2]
    else:
        count = diff.size
    loss = float(np.sum(diff ** 2) / count)
    if not grad:
        return loss
    return loss, net.backward(cache, 2.0 * diff / count)


def train(model: NetworkDenoiser, dataset, cfg: TrainConfig, log_every: int = 0, log=print):
    """Fit the network to the noise-prediction objective. Returns ``(model, losses)``."""
    data = np.asarray(dataset, dtype=float)
    if data.ndim != 3 or data.shape[0] == 0:
        raise DenoiserError("dataset must be a non-empty (N, L, D) array")
    if data.shape[1:] != (model.n_waypoints, model.dim):
        raise DenoiserError(f"dataset trajectories {data.shape[1:]} do not match model "
                            f"({model.n_waypoints}, {model.dim})")
    dtype = np.dtype(cfg.dtype)
    data = data.astype(dtype)
    net = model.net.astype(dtype)
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(net.params, cfg.learning_rate)
    T = model.schedule.T
    losses = np.zeros(cfg.steps)
    for step in range(cfg.steps):
        idx = rng.integers(0, data.shape[0], cfg.batch_size)
        t = rng.integers(1, T + 1, cfg.batch_size)
        noise = rng.standard_normal((cfg.batch_size,) + data.shape[1:], dtype=dtype)
        loss, grads = denoising_loss(net, data[idx], t, noise, model.schedule,
                                     clamp_boundaries=cfg.clamp_boundaries)
        frac = step / max(cfg.steps - 1, 1)
        opt.lr = cfg.learning_rate * (cfg.lr_final_fraction + (1.0 - cfg.lr_final_fraction)
                                      * 0.5 * (1.0 + np.cos(np.pi * frac)))
        if cfg.learning_rate > 0:
            opt.step(net.params, grads)
        losses[step] = loss
        if log_every and (step + 1) % log_every == 0:
            log(f"step {step + 1}/{cfg.steps} loss {np.mean(losses[max(0, step - log_every + 1):step + 1]):.4f}")
    model.net = net.astype(np.float64)
    model._fast = None
    return model, losses


def smoothed(losses, window: int = 50) -> np.ndarray:
    """Means over consecutive non-overlapping windows."""
    losses = np.asarray(losses)
    n = len(losses) // window
    return losses[: n * window].reshape(n, window).mean(axis=1)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: NetworkDenoiser, path) -> None:
    """Write a JSON checkpoint (see docs/formats.md)."""
    net = model.net
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": asdict(net.spec),
        "n_waypoints": net.n_waypoints,
        "dim": net.dim,
        "schedule": {"kind": model.schedule.kind, "T": model.schedule.T,
                     "beta": [float(b) for b in model.schedule.beta]},
        "robot": model.robot.to_dict() if model.robot is not None else None,
        "params": {k: {"shape": list(v.shape), "data": [float(x) for x in v.ravel()]}
                   for k, v in sorted(net.params.items())},
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_checkpoint(path) -> NetworkDenoiser:
    from .fileio import FormatError, VersionError, parse_json

    doc = parse_json(Path(path).read_text(), str(path))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{path}: not a checkpoint (format={doc.get('format')!r})")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise VersionError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    try:
        spec = DenoiserSpec(**doc["spec"])
        params = {k: np.asarray(v["data"], dtype=float).reshape(v["shape"]) for k, v in doc["params"].items()}
        net = TemporalConvNet(doc["n_waypoints"], doc["dim"], spec, params=params)
        schedule = NoiseSchedule(np.asarray(doc["schedule"]["beta"], dtype=float), doc["schedule"]["kind"])
        robot = RobotModel.from_dict(doc["robot"]) if doc.get("robot") else None
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed checkpoint: {exc}") from exc
    return NetworkDenoiser(net, schedule, robot)


def new_network_denoiser(n_waypoints: int, robot: RobotModel, schedule: NoiseSchedule | None = None,
                         spec: DenoiserSpec = DenoiserSpec(), seed: int = 0) -> NetworkDenoiser:
    schedule = schedule if schedule is not None else make_schedule(128, "cosine")
    return NetworkDenoiser(TemporalConvNet(n_waypoints, robot.config_dim, spec, seed), schedule, robot)

"""Sequential VAE: two-layer LSTM encoder and decoder with mean/variance heads.

Both ``q(Z|U)`` and ``p(U|Z)`` factorize over time columns into diagonal
Gaussians; the latent sequence has one column per TMP column.
"""
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .container import load_container, save_container
from .errors import FormatError, InvalidArgument, NonFiniteError

log = logging.getLogger(__name__)

LOG_2PI = np.log(2 * np.pi)


@dataclass
class SVAEConfig:
    n_nodes: int = 256
    latent_dim: int = 12
    enc_hidden: tuple = (64, 32)
    dec_hidden: tuple = (32, 64)
    lr: float = 3e-3
    epochs: int = 200
    batch_size: int = 8
    seed: int = 0
    kl_weight: float = 1.0
    kl_warmup: float = 0.25
    init_log_var: float = -3.0
    dec_var_floor: float = 1e-2

    def __post_init__(self):
        self.enc_hidden = tuple(int(h) for h in self.enc_hidden)
        self.dec_hidden = tuple(int(h) for h in self.dec_hidden)
        dims = (self.n_nodes, self.latent_dim) + self.enc_hidden + self.dec_hidden
        if min(dims) < 1 or len(self.enc_hidden) != 2 or len(self.dec_hidden) != 2:
            raise InvalidArgument(f"invalid layer sizes in {self}")
        if self.latent_dim >= self.n_nodes:
            raise InvalidArgument("latent dimension must be smaller than the node count")
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise InvalidArgument("epochs, batch_size and lr must be positive")

    def kl_weight_at(self, epoch):
        """KL weight for 0-based ``epoch``: linear warm-up then constant."""
        warm = int(round(self.kl_warmup * self.epochs))
        if warm <= 0:
            return self.kl_weight
        return self.kl_weight * min(1.0, (epoch + 1) / warm)

    def to_dict(self):
        d = asdict(self)
        d["enc_hidden"] = list(self.enc_hidden)
        d["dec_hidden"] = list(self.dec_hidden)
        return d


@dataclass
class EncoderOutput:
    M: np.ndarray
    S: np.ndarray


@dataclass
class DecoderOutput:
    M: np.ndarray
    S: np.ndarray


@dataclass
class ZPrior:
    Z_bar: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        if self.Z_bar.shape != self.C.shape:
            raise InvalidArgument("Z_bar and C differ in shape")
        if not np.all(self.C > 0):
            raise InvalidArgument("prior variances must be strictly positive")

    def sample(self, rng, n=None):
        shape = self.Z_bar.shape if n is None else (n,) + self.Z_bar.shape
        return self.Z_bar + np.sqrt(self.C) * rng.standard_normal(shape)

    def save(self, path, metadata=None):
        return save_container(path, {"Z_bar": self.Z_bar, "C": self.C}, metadata)

    @classmethod
    def load(cls, path):
        t, _ = load_container(path)
        if "Z_bar" not in t or "C" not in t:
            raise FormatError(f"{path}: not a latent prior container")
        return cls(t["Z_bar"], t["C"])


_LAYERS = ("enc1", "enc2", "enc_mu", "enc_var", "dec1", "dec2", "dec_mu", "dec_var")


class SVAE:
    """Encoder/decoder weights plus forward and backward passes."""

    def __init__(self, config, rng=None):
        c = config
        self.config = c
        h1, h2 = c.enc_hidden
        g1, g2 = c.dec_hidden
        self.enc1 = nn.LSTMLayer(c.n_nodes, h1, rng)
        self.enc2 = nn.LSTMLayer(h1, h2, rng)
        self.enc_mu = nn.DenseHead(h2, c.latent_dim, "identity", rng)
        self.enc_var = nn.DenseHead(h2, c.latent_dim, "exp", rng)
        self.dec1 = nn.LSTMLayer(c.latent_dim, g1, rng)
        self.dec2 = nn.LSTMLayer(g1, g2, rng)
        self.dec_mu = nn.DenseHead(g2, c.n_nodes, "identity", rng)
        self.dec_var = nn.DenseHead(g2, c.n_nodes, "exp", rng, floor=c.dec_var_floor)
        if rng is not None:
            self.dec_var.set_params(W=self.dec_var.W * 0.1, b=np.full(c.n_nodes, c.init_log_var))
            self.enc_var.set_params(W=self.enc_var.W * 0.1, b=np.full(c.latent_dim, -2.0))

    # ----------------------------------------------------------- parameters
    def layers(self):
        return {name: getattr(self, name) for name in _LAYERS}

    def params(self):
        return {f"{ln}.{pn}": arr for ln, layer in self.layers().items()
                for pn, arr in layer.params().items()}

    def set_params(self, flat):
        grouped = {}
        for key, arr in flat.items():
            ln, pn = key.split(".")
            grouped.setdefault(ln, {})[pn] = arr
        for ln, kw in grouped.items():
            getattr(self, ln).set_params(**kw)

    def copy(self):
        other = SVAE(self.config)
        other.set_params({k: v.copy() for k, v in self.params().items()})
        return other

    def save(self, path, metadata=None):
        meta = {"config": self.config.to_dict()}
        meta.update(metadata or {})
        return save_container(path, self.params(), meta)

    @classmethod
    def load(cls, path):
        tensors, meta = load_container(path)
        if "config" not in meta:
            raise FormatError(f"{path}: weights container lacks a config")
        model = cls(SVAEConfig(**meta["config"]))
        expected = set(model.params())
        if set(tensors) != expected:
            raise FormatError(f"{path}: tensor names {sorted(set(tensors) ^ expected)} unexpected/missing")
        for k, v in model.params().items():
            if tensors[k].shape != v.shape:
                raise FormatError(f"{path}: {k} has shape {tensors[k].shape}, expected {v.shape}")
        model.set_params(tensors)
        return model, meta

    # ------------------------------------------------------------- passes
    def _check_rows(self, X, rows, what):
        if X.shape[-2] != rows:
            raise InvalidArgument(f"{what} has {X.shape[-2]} rows, expected {rows}")

    def encode_tbd(self, x):
        h1, c1 = nn.lstm_forward_tbd(self.enc1, x)
        h2, c2 = nn.lstm_forward_tbd(self.enc2, h1)
        m, cm = nn.dense_forward(self.enc_mu, h2)
        s, cs = nn.dense_forward(self.enc_var, h2)
        return m, s, (c1, c2, cm, cs)

    def encode_backward_tbd(self, cache, dm, ds):
        c1, c2, cm, cs = cache
        g = {}
        dh2, g["enc_mu"] = nn.dense_backward(self.enc_mu, cm, dm)
        dh2v, g["enc_var"] = nn.dense_backward(self.enc_var, cs, ds)
        dh1, g["enc2"] = nn.lstm_backward_tbd(self.enc2, c2, dh2 + dh2v)
        dx, g["enc1"] = nn.lstm_backward_tbd(self.enc1, c1, dh1)
        return dx, g

    def decode_tbd(self, z):
        h1, c1 = nn.lstm_forward_tbd(self.dec1, z)
        h2, c2 = nn.lstm_forward_tbd(self.dec2, h1)
        m, cm = nn.dense_forward(self.dec_mu, h2)
        s, cs = nn.dense_forward(self.dec_var, h2)
        return m, s, (c1, c2, cm, cs)

    def decode_backward_tbd(self, cache, dm, ds):
        c1, c2, cm, cs = cache
        g = {}
        dh2, g["dec_mu"] = nn.dense_backward(self.dec_mu, cm, dm)
        dh2v, g["dec_var"] = nn.dense_backward(self.dec_var, cs, ds)
        dh1, g["dec2"] = nn.lstm_backward_tbd(self.dec2, c2, dh2 + dh2v)
        dz, g["dec1"] = nn.lstm_backward_tbd(self.dec1, c1, dh1)
        return dz, g

    def encode(self, U):
        """``q(Z|U)`` parameters for ``U`` of shape (n, T) or (B, n, T)."""
        U = np.asarray(getattr(U, "U", U), dtype=float)
        self._check_rows(U, self.config.n_nodes, "TMP input")
        m, s, _ = self.encode_tbd(nn._to_tbd(U))
        return EncoderOutput(nn._from_tbd(m, U.ndim), nn._from_tbd(s, U.ndim))

    def decode(self, Z):
        """``p(U|Z)`` parameters for ``Z`` of shape (d, T) or (B, d, T)."""
        Z = np.asarray(Z, dtype=float)
        self._check_rows(Z, self.config.latent_dim, "latent input")
        m, s, _ = self.decode_tbd(nn._to_tbd(Z))
        return DecoderOutput(nn._from_tbd(m, Z.ndim), nn._from_tbd(s, Z.ndim))

    def elbo_and_grads(self, U, eps, kl_weight=1.0):
        """One-sample ELBO summed over the batch, and its gradient.

        ``U``: (B, n, T); ``eps``: (B, d, T) standard-normal reparameterization
        noise. Returns ``(objective, elbo, recon, kl, grads)`` where
        ``objective = recon - kl_weight * kl`` is what ``grads`` differentiate.
        """
        x = nn._to_tbd(U)
        e = nn._to_tbd(eps)
        m, s, ecache = self.encode_tbd(x)
        sd = np.sqrt(s)
        z = m + sd * e
        M, S, dcache = self.decode_tbd(z)
        r = x - M
        recon = float(np.sum(-0.5 * (LOG_2PI + np.log(S)) - r * r / (2 * S)))
        kl = float(np.sum(0.5 * (s + m * m - 1.0 - np.log(s))))
        dM = r / S
        dS = -0.5 / S + r * r / (2 * S * S)
        dz, gdec = self.decode_backward_tbd(dcache, dM, dS)
        dm = dz - kl_weight * m
        ds = dz * e / (2 * sd) - kl_weight * 0.5 * (1.0 - 1.0 / s)
        _, genc = self.encode_backward_tbd(ecache, dm, ds)
        grads = {}
        for ln, g in list(gdec.items()) + list(genc.items()):
            for pn, arr in g.items():
                grads[f"{ln}.{pn}"] = arr
        return recon - kl_weight * kl, recon - kl, recon, kl, grads


def encode(weights, U):
    return weights.encode(U)


def decode(weights, Z):
    return weights.decode(Z)


def kl_term(enc):
    """KL(q(Z|U) || N(0, I)) summed over all entries."""
    M, S = np.asarray(enc.M, dtype=float), np.asarray(enc.S, dtype=float)
    return float(np.sum(0.5 * (S + M * M - 1.0 - np.log(S))))


def reconstruction_term(dec, U):
    """Log-density of ``U`` under the column-factorized diagonal Gaussian."""
    U = np.asarray(getattr(U, "U", U), dtype=float)
    if U.shape != dec.M.shape:
        raise InvalidArgument(f"U shape {U.shape} != decoder output {dec.M.shape}")
    r = U - dec.M
    return float(np.sum(-0.5 * (LOG_2PI + np.log(dec.S)) - r * r / (2 * dec.S)))


def _as_u(item):
    item = getattr(item, "tmp", item)
    return np.asarray(getattr(item, "U", item), dtype=float)


def _stack(corpus):
    if isinstance(corpus, np.ndarray):
        return corpus.astype(float)
    return np.stack([_as_u(c) for c in corpus])


def _batch_elbo(model, X, rng):
    eps = rng.standard_normal((X.shape[0], model.config.latent_dim, X.shape[2]))
    return model.elbo_and_grads(X, eps, 1.0)[1]


def corpus_hash(X):
    return hashlib.sha256(np.ascontiguousarray(X).tobytes()).hexdigest()[:16]


def train(corpus, config, val_corpus=None, callback=None):
    """Maximize the ELBO with Adam on reparameterized one-sample gradients.

    Parameters
    ----------
    corpus, val_corpus : sequence of TMPSequence or array (N, n, T)
    config : SVAEConfig
    callback : callable(epoch, record, model), optional

    Returns
    -------
    model : SVAE
    history : dict
        Per-epoch lists ``train_elbo`` (mean per sequence, full KL weight),
        ``train_recon``, ``train_kl``, ``kl_weight`` and ``val_elbo``.
    """
    X = _stack(corpus)
    if X.shape[0] == 0:
        raise InvalidArgument("empty training corpus")
    if X.shape[1] != config.n_nodes:
        raise InvalidArgument(f"corpus has {X.shape[1]} nodes, config says {config.n_nodes}")
    V = _stack(val_corpus) if val_corpus is not None and len(val_corpus) else None
    rng = np.random.default_rng(config.seed)
    model = SVAE(config, rng)
    params = model.params()
    state = nn.adam_init(params)
    history = {"train_elbo": [], "train_recon": [], "train_kl": [], "kl_weight": [],
               "val_elbo": []}
    N = X.shape[0]
    val_rng_seed = config.seed + 7919
    for epoch in range(config.epochs):
        w = config.kl_weight_at(epoch)
        order = rng.permutation(N)
        tot = np.zeros(3)
        for start in range(0, N, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb = X[idx]
            eps = rng.standard_normal((len(idx), config.latent_dim, X.shape[2]))
            obj, elbo, recon, kl, grads = model.elbo_and_grads(xb, eps, w)
            if not np.isfinite(obj) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise NonFiniteError(f"non-finite loss at epoch {epoch}, batch sequences {idx.tolist()}")
            tot += (elbo, recon, kl)
            neg = {k: -g / len(idx) for k, g in grads.items()}
            params, state = nn.adam_step(params, neg, state, lr=config.lr)
            model.set_params(params)
        rec = {"epoch": epoch, "train_elbo": tot[0] / N, "train_recon": tot[1] / N,
               "train_kl": tot[2] / N, "kl_weight": w}
        if V is not None:
            rec["val_elbo"] = _batch_elbo(model, V, np.random.default_rng(val_rng_seed)) / len(V)
        for key in history:
            history[key].append(rec.get(key))
        log.debug("epoch %d elbo %.2f", epoch, rec["train_elbo"])
        if callback is not None:
            callback(epoch, rec, model)
    history["corpus_hash"] = corpus_hash(X)
    history["n_train"] = int(N)
    history["n_val"] = 0 if V is None else int(len(V))
    return model, history


def estimate_z_prior(weights, corpus):
    """Moment-matched Gaussian over the mixture of encoder posteriors."""
    X = _stack(corpus)
    if X.shape[0] < 2:
        raise InvalidArgument("need at least two sequences to estimate the latent prior")
    enc = weights.encode(X)
    Z_bar = enc.M.mean(axis=0)
    C = enc.S.mean(axis=0) + enc.M.var(axis=0)
    return ZPrior(Z_bar, C)

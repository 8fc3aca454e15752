"""Training corpus of simulated TMP sequences and paired ECG test cases."""
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .apsim import APParams, PacingConfig, ScarConfig, TMPSequence, simulate
from .container import load_container, save_container
from .errors import ConfigurationError, FormatError, InvalidArgument

SETTINGS = ("unseen-scar", "unseen-origin", "unseen-both")
NO_SCAR = (-1, 0.0)


def farthest_point_nodes(mesh, count, start=0, exclude=()):
    """Deterministic farthest-point subsampling of mesh nodes."""
    X = mesh.node_coords
    allowed = np.ones(len(X), bool)
    allowed[list(exclude)] = False
    if count > allowed.sum():
        raise InvalidArgument(f"cannot pick {count} nodes from {allowed.sum()} candidates")
    if not allowed[start]:
        start = int(np.flatnonzero(allowed)[0])
    chosen = [start]
    d = np.linalg.norm(X - X[start], axis=1)
    for _ in range(count - 1):
        cand = np.where(allowed, d, -1.0)
        cand[chosen] = -1.0
        nxt = int(np.argmax(cand))
        chosen.append(nxt)
        d = np.minimum(d, np.linalg.norm(X - X[nxt], axis=1))
    return chosen


@dataclass
class CorpusSpec:
    """Origins x scar configurations to simulate.

    ``scar_configs`` holds ``(center, radius)`` pairs; ``(-1, 0.0)`` is the
    scar-free configuration. ``pairs`` optionally replaces the full product.
    """
    origin_nodes: list
    scar_configs: list
    ap_params: APParams = field(default_factory=APParams)
    seed: int = 0
    pacing_radius: float = 1.0
    stim_duration: float = 2.0
    stim_amplitude: float = 1.0
    pairs: list = None
    skip_incompatible: bool = False

    def __post_init__(self):
        self.origin_nodes = [int(o) for o in self.origin_nodes]
        self.scar_configs = [(int(c), float(r)) for c, r in self.scar_configs]
        if self.pairs is not None:
            self.pairs = [(int(o), (int(c), float(r))) for o, (c, r) in self.pairs]
        if not self.origin_nodes or not self.scar_configs:
            raise InvalidArgument("corpus spec needs at least one origin and one scar configuration")
        if isinstance(self.ap_params, dict):
            self.ap_params = APParams(**self.ap_params)

    def expand(self):
        if self.pairs is not None:
            return list(self.pairs)
        return [(o, s) for o in self.origin_nodes for s in self.scar_configs]

    def to_dict(self):
        return {"origin_nodes": self.origin_nodes, "scar_configs": [list(s) for s in self.scar_configs],
                "ap_params": self.ap_params.to_dict(), "seed": self.seed,
                "pacing_radius": self.pacing_radius, "stim_duration": self.stim_duration,
                "stim_amplitude": self.stim_amplitude,
                "pairs": None if self.pairs is None else [[o, list(s)] for o, s in self.pairs],
                "skip_incompatible": self.skip_incompatible}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.get("pairs") is not None:
            d["pairs"] = [(o, tuple(s)) for o, s in d["pairs"]]
        d["scar_configs"] = [tuple(s) for s in d["scar_configs"]]
        return cls(**d)


def default_spec(mesh, n_origins=50, n_scars=16, scar_radius=2.0, **kw):
    """Origins and scar centers spread by farthest-point sampling.

    ``n_scars`` scarred configurations plus the scar-free one.
    """
    origins = farthest_point_nodes(mesh, n_origins, start=0)
    centers = farthest_point_nodes(mesh, n_scars, start=mesh.node_count // 2 + 3)
    scars = [NO_SCAR] + [(c, scar_radius) for c in centers]
    kw.setdefault("skip_incompatible", True)
    return CorpusSpec(origins, scars, **kw)


def scar_nodes_for(mesh, config):
    center, radius = config
    if center < 0:
        return ()
    return tuple(int(i) for i in mesh.nodes_within(center, radius))


@dataclass
class CorpusEntry:
    origin: int
    scar_config: tuple
    scar_nodes: tuple
    tmp: TMPSequence


class Corpus:
    """In-memory corpus; ``X`` stacks all TMP matrices as (N, n, T)."""

    def __init__(self, entries, spec=None, skipped=()):
        self.entries = list(entries)
        self.spec = spec
        self.skipped = list(skipped)

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, i):
        return self.entries[i]

    def __iter__(self):
        return iter(self.entries)

    @property
    def X(self):
        return np.stack([e.tmp.U for e in self.entries])

    def subset(self, idx):
        return Corpus([self.entries[i] for i in idx], self.spec)

    def save(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = []
        for i, e in enumerate(self.entries):
            name = f"seq_{i:05d}.ntc"
            meta = {"origin": e.origin, "scar_config": list(e.scar_config),
                    "scar_nodes": list(e.scar_nodes), "dt_effective": e.tmp.dt_effective,
                    "provenance": e.tmp.metadata}
            save_container(out / name, {"U": e.tmp.U}, meta)
            files.append({"file": name, "origin": e.origin, "scar_config": list(e.scar_config),
                          "n_scar_nodes": len(e.scar_nodes)})
        manifest = {"spec": self.spec.to_dict() if self.spec else None,
                    "n_sequences": len(self.entries), "files": files,
                    "skipped_pairs": [[o, list(s)] for o, s in self.skipped]}
        (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
        return out

    @classmethod
    def load(cls, in_dir):
        d = Path(in_dir)
        try:
            manifest = json.loads((d / "manifest.json").read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise FormatError(f"{d}: unreadable corpus manifest ({exc})") from None
        entries = []
        for f in manifest["files"]:
            t, meta = load_container(d / f["file"])
            if "U" not in t:
                raise FormatError(f"{f['file']}: no tensor 'U'")
            entries.append(CorpusEntry(meta["origin"], tuple(meta["scar_config"]),
                                       tuple(meta["scar_nodes"]),
                                       TMPSequence(t["U"], meta["dt_effective"], meta["provenance"])))
        spec = CorpusSpec.from_dict(manifest["spec"]) if manifest.get("spec") else None
        skipped = [(o, tuple(s)) for o, s in manifest.get("skipped_pairs", [])]
        return cls(entries, spec, skipped)


def simulate_pair(mesh, spec, origin, scar_config):
    scar = ScarConfig(scar_nodes_for(mesh, scar_config))
    if origin in scar.scar_nodes:
        raise ConfigurationError(f"origin {origin} lies inside scar {scar_config}")
    pace = [i for i in mesh.nodes_within(origin, spec.pacing_radius) if i not in set(scar.scar_nodes)]
    pacing = PacingConfig(tuple(pace), stim_duration=spec.stim_duration,
                          stim_amplitude=spec.stim_amplitude)
    tmp = simulate(mesh, spec.ap_params, pacing, scar)
    tmp.metadata.update({"origin": origin, "scar_config": list(scar_config)})
    return CorpusEntry(origin, scar_config, scar.scar_nodes, tmp)


def generate_corpus(mesh, lead_field, spec, out_dir=None):
    """Simulate every (origin, scar) pair of ``spec``.

    Pairs whose origin falls inside the scar raise ``ConfigurationError``
    naming the pair, or are skipped (and recorded) when
    ``spec.skip_incompatible`` is set. ``lead_field`` is only checked for
    consistency with the mesh.
    """
    if lead_field is not None and lead_field.H.shape[1] != mesh.node_count:
        raise ConfigurationError("lead field and mesh disagree on node count")
    entries, skipped = [], []
    for origin, sc in spec.expand():
        try:
            entries.append(simulate_pair(mesh, spec, origin, sc))
        except ConfigurationError as exc:
            if spec.skip_incompatible and origin in scar_nodes_for(mesh, sc):
                skipped.append((origin, sc))
                continue
            raise ConfigurationError(f"pair (origin={origin}, scar={sc}): {exc}") from exc
    corpus = Corpus(entries, spec, skipped)
    if out_dir is not None:
        corpus.save(out_dir)
    return corpus


def split(corpus, val_fraction, seed=0):
    """Deterministic shuffled partition into (train, validation)."""
    if not 0 < val_fraction < 1:
        raise InvalidArgument(f"val_fraction must lie in (0, 1), got {val_fraction}")
    n = len(corpus)
    perm = np.random.default_rng(seed).permutation(n)
    n_val = int(round(n * val_fraction))
    val, train = sorted(perm[:n_val].tolist()), sorted(perm[n_val:].tolist())
    return corpus.subset(train), corpus.subset(val)


# ---------------------------------------------------------------- test cases

@dataclass
class ECGSequence:
    Y: np.ndarray
    snr_db: float


@dataclass
class TestCase:
    __test__ = False  # not a pytest class

    tmp_true: TMPSequence
    ecg: ECGSequence
    origin_true: int
    scar_true: tuple
    snr_db: float
    setting_tag: str
    case_id: str = ""

    def save(self, path):
        meta = {"origin_true": self.origin_true, "scar_true": list(self.scar_true),
                "snr_db": self.snr_db, "setting_tag": self.setting_tag, "case_id": self.case_id,
                "dt_effective": self.tmp_true.dt_effective}
        return save_container(path, {"U_true": self.tmp_true.U, "Y": self.ecg.Y}, meta)

    @classmethod
    def load(cls, path):
        t, m = load_container(path)
        if "Y" not in t or "U_true" not in t:
            raise FormatError(f"{path}: test case needs tensors 'Y' and 'U_true'")
        return cls(TMPSequence(t["U_true"], m["dt_effective"]), ECGSequence(t["Y"], m["snr_db"]),
                   m["origin_true"], tuple(m["scar_true"]), m["snr_db"], m["setting_tag"],
                   m.get("case_id", ""))


def add_noise(Y_clean, snr_db, rng):
    """Zero-mean Gaussian noise with power ``mean(Y**2) / 10**(snr/10)``."""
    if np.isinf(snr_db) and snr_db > 0:
        return Y_clean.copy()
    power = float(np.mean(Y_clean ** 2))
    sigma = np.sqrt(power / 10 ** (snr_db / 10))
    return Y_clean + sigma * rng.standard_normal(Y_clean.shape)


def check_setting(tag, held_out_pairs, training_spec):
    if tag not in SETTINGS:
        raise InvalidArgument(f"unknown setting {tag!r}; expected one of {SETTINGS}")
    if training_spec is None:
        return
    train_o = set(training_spec.origin_nodes)
    train_s = set(training_spec.scar_configs)
    for o, s in held_out_pairs:
        origin_seen = o in train_o
        scar_seen = s in train_s
        if tag == "unseen-scar" and scar_seen:
            raise ConfigurationError(f"scar {s} is in the training corpus (setting {tag})")
        if tag == "unseen-origin" and origin_seen:
            raise ConfigurationError(f"origin {o} is in the training corpus (setting {tag})")
        if tag == "unseen-both" and (origin_seen or scar_seen):
            raise ConfigurationError(f"pair ({o}, {s}) overlaps the training corpus (setting {tag})")


def make_test_cases(mesh, lead_field, held_out, snr_db=25.0, setting_tag="unseen-both",
                    training_spec=None):
    """Simulate held-out configurations and project them to noisy ECG.

    Each case draws its noise from its own stream seeded by
    ``(held_out.seed, case index)``.
    """
    pairs = held_out.expand()
    check_setting(setting_tag, pairs, training_spec)
    cases = []
    for i, (o, s) in enumerate(pairs):
        e = simulate_pair(mesh, held_out, o, s)
        Y = lead_field.H @ e.tmp.U
        rng = np.random.default_rng([held_out.seed, i])
        Y = add_noise(Y, snr_db, rng)
        cases.append(TestCase(e.tmp, ECGSequence(Y, snr_db), o, e.scar_nodes, snr_db, setting_tag,
                              f"{setting_tag}-{i:03d}"))
    return cases

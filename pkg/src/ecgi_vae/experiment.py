"""Three-setting experiment runner: metrics table, summary, paired statistics, plots."""
import json
import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from .apsim import TMPSequence
from .baselines import FixedEPConfig, GreensiteConfig, fixed_ep_reconstruct, greensite_reconstruct
from .corpus import NO_SCAR, SETTINGS, CorpusSpec, default_spec, scar_nodes_for
from .inversion import EMConfig, MeasurementModel, em_infer, estimate_beta
from .metrics import ScarRule, detect_scar, dice, nrmse, origin_error

log = logging.getLogger(__name__)

METHODS = ("proposed", "greensite", "fixed-ep")
METRICS = ("nrmse", "dice", "origin_error_mm")
DEFAULT_RULES = {"proposed": ScarRule("physiological"), "fixed-ep": ScarRule("physiological"),
                 "greensite": ScarRule("amplitude")}


@dataclass
class MetricsRecord:
    case_id: str
    method: str
    setting: str
    nrmse: float = None
    dice: float = None
    origin_error_mm: float = None
    error: str = None

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


def held_out_specs(mesh, training_spec, n_cases=10, seed=0, scar_radius=2.0, pacing_radius=1.0):
    """Held-out (origin, scar) pairs for each of the three settings.

    ``unseen-scar`` pairs training origins with new scar centers,
    ``unseen-origin`` pairs new origins with training scar configurations and
    ``unseen-both`` uses new origins and new scars.
    """
    rng = np.random.default_rng(seed)
    tr_origins = list(training_spec.origin_nodes)
    tr_scars = list(training_spec.scar_configs)
    tr_centers = {c for c, _ in tr_scars}
    new_origins = [i for i in range(mesh.node_count) if i not in set(tr_origins)]
    new_centers = [i for i in range(mesh.node_count) if i not in tr_centers]
    out = {}
    for tag in SETTINGS:
        pairs = []
        tries = 0
        while len(pairs) < n_cases:
            tries += 1
            if tries > 1000 * n_cases:
                raise RuntimeError(f"could not draw {n_cases} held-out cases for {tag}")
            o = int(rng.choice(tr_origins if tag == "unseen-scar" else new_origins))
            if tag == "unseen-origin":
                s = tr_scars[int(rng.integers(len(tr_scars)))]
            else:
                s = (int(rng.choice(new_centers)), float(scar_radius))
            if o in scar_nodes_for(mesh, s) or (o, s) in pairs:
                continue
            pairs.append((o, s))
        out[tag] = CorpusSpec([p[0] for p in pairs], [p[1] for p in pairs],
                              ap_params=training_spec.ap_params, seed=seed + 1 + SETTINGS.index(tag),
                              pacing_radius=pacing_radius, pairs=pairs)
    return out


def desk_training_spec(mesh, n_origins=12, n_scars=5, **kw):
    return default_spec(mesh, n_origins=n_origins, n_scars=n_scars, **kw)


# ---------------------------------------------------------------- running

def _reconstruct(method, case, mesh, lead_field, weights, zprior, configs):
    Y = case.ecg.Y
    dte = case.tmp_true.dt_effective
    extra = {}
    if method == "proposed":
        beta = estimate_beta(lead_field.H, Y, configs.get("beta"))
        res = em_infer(MeasurementModel(lead_field.H, beta), Y, weights, zprior,
                       configs.get("em", EMConfig()))
        U = res.posterior.U_hat
        extra = {"L_trace": res.L_trace, "log_marginal": res.log_marginal,
                 "converged": res.converged, "beta": beta}
    elif method == "greensite":
        U = greensite_reconstruct(lead_field.H, Y, configs.get("greensite", GreensiteConfig())).U
    elif method == "fixed-ep":
        U = fixed_ep_reconstruct(lead_field.H, Y, mesh, configs.get("fixed-ep", FixedEPConfig()),
                                 U_model=configs.get("fixed_ep_model")).U
    else:
        raise ValueError(f"unknown method {method!r}")
    return TMPSequence(U, dte), extra


def evaluate_case(method, case, recon, mesh, rule):
    scar_hat = detect_scar(recon, rule)
    rec = MetricsRecord(case.case_id, method, case.setting_tag)
    rec.nrmse = nrmse(recon.U, case.tmp_true.U)
    rec.dice = dice(scar_hat, case.scar_true) if len(case.scar_true) else None
    rec.origin_error_mm = origin_error(recon, case.origin_true, mesh)
    return rec, scar_hat


def summarize(records):
    """Per (setting, method) mean, std (ddof=1 when n > 1) and counts of each metric."""
    out = {}
    keys = sorted({(r["setting"], r["method"]) for r in records})
    for setting, method in keys:
        rows = [r for r in records if r["setting"] == setting and r["method"] == method]
        block = {"n_cases": len(rows), "n_failed": sum(1 for r in rows if r.get("error"))}
        for m in METRICS:
            vals = np.array([r[m] for r in rows if r.get(m) is not None], dtype=float)
            block[m] = {"mean": float(vals.mean()) if vals.size else None,
                        "std": float(vals.std(ddof=1)) if vals.size > 1 else (0.0 if vals.size else None),
                        "n": int(vals.size), "n_undefined": len(rows) - int(vals.size)}
        out.setdefault(setting, {})[method] = block
    return out


def paired_statistics(records, reference="proposed"):
    """Paired t statistics of (baseline - reference) per metric and setting."""
    out = {}
    by = {}
    for r in records:
        by[(r["setting"], r["method"], r["case_id"])] = r
    for setting in sorted({r["setting"] for r in records}):
        for method in sorted({r["method"] for r in records if r["method"] != reference}):
            res = {}
            for m in METRICS:
                diffs = []
                for (s, meth, cid), r in by.items():
                    if s != setting or meth != method:
                        continue
                    ref = by.get((setting, reference, cid))
                    if ref is None or r.get(m) is None or ref.get(m) is None:
                        continue
                    diffs.append(r[m] - ref[m])
                diffs = np.array(diffs, dtype=float)
                entry = {"n": int(diffs.size), "mean_diff": float(diffs.mean()) if diffs.size else None}
                if diffs.size > 1 and np.std(diffs) > 0:
                    t, p = stats.ttest_1samp(diffs, 0.0)
                    entry.update(t=float(t), p=float(p))
                else:
                    entry.update(t=None, p=None)
                res[m] = entry
            out.setdefault(setting, {})[f"{method} - {reference}"] = res
    return out


def format_table(summary):
    """Markdown table, one block per setting, mean +- std per metric."""
    lines = []
    for setting, methods in summary.items():
        names = [m for m in METHODS if m in methods] + [m for m in methods if m not in METHODS]
        lines.append(f"### {setting}\n")
        lines.append("| metric | " + " | ".join(names) + " |")
        lines.append("|---" * (len(names) + 1) + "|")
        for metric in METRICS:
            cells = []
            for name in names:
                b = methods[name][metric]
                cells.append("n/a" if b["mean"] is None else f"{b['mean']:.3f} ± {b['std']:.3f}")
            lines.append(f"| {metric} | " + " | ".join(cells) + " |")
        lines.append("")
    return "\n".join(lines)


@dataclass
class ExperimentResult:
    records: list
    summary: dict
    paired: dict
    failures: list
    timings: dict


def run_experiment(setting, methods, cases, mesh, lead_field, weights=None, zprior=None,
                   configs=None, scar_rules=None, out_dir=None, plots=True):
    """Run every method on every case of one setting.

    Failures of a single (method, case) are recorded and the run continues.
    With ``out_dir`` the results table (``results.jsonl``), ``summary.json``,
    ``report.md`` and per-case figures are written there.
    """
    configs = dict(configs or {})
    rules = dict(DEFAULT_RULES)
    rules.update(scar_rules or {})
    if "proposed" in methods and (weights is None or zprior is None):
        raise ValueError("the proposed method needs trained weights and a latent prior")
    records, failures, timings = [], [], {m: 0.0 for m in methods}
    out = Path(out_dir) if out_dir is not None else None
    for case in cases:
        if case.setting_tag != setting:
            raise ValueError(f"case {case.case_id} belongs to {case.setting_tag}, not {setting}")
        recons, extras, scars = {}, {}, {}
        for method in methods:
            t0 = time.perf_counter()
            try:
                recon, extra = _reconstruct(method, case, mesh, lead_field, weights, zprior, configs)
                rec, scars[method] = evaluate_case(method, case, recon, mesh, rules[method])
                recons[method], extras[method] = recon, extra
            except Exception as exc:  # recorded, run continues
                log.warning("case %s method %s failed: %s", case.case_id, method, exc)
                rec = MetricsRecord(case.case_id, method, setting, error=f"{type(exc).__name__}: {exc}")
                failures.append((case.case_id, method, rec.error))
            timings[method] += time.perf_counter() - t0
            records.append(asdict(rec))
        if out is not None and plots and recons:
            from .plotting import plot_case
            plot_case(out / "plots" / f"{case.case_id}.png", case, recons, scars, extras, mesh)
    summary = summarize(records)
    paired = paired_statistics(records) if "proposed" in methods else {}
    result = ExperimentResult(records, summary, paired, failures, timings)
    if out is not None:
        write_results(out, result)
    return result


def write_results(out_dir, result):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.jsonl", "w") as fh:
        for r in result.records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    (out / "summary.json").write_text(json.dumps(
        {"summary": result.summary, "paired": result.paired,
         "failures": [list(f) for f in result.failures], "timings_s": result.timings},
        indent=1, sort_keys=True))
    (out / "report.md").write_text(format_table(result.summary) + "\n")
    return out


def read_results(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]

"""Command-line entry point: ``ecgi-vae <group> <command> ...``."""
import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .apsim import APParams, PacingConfig, ScarConfig, simulate
from .baselines import FixedEPConfig, GreensiteConfig, fixed_ep_reconstruct, greensite_reconstruct
from .container import load_container, save_container
from .corpus import Corpus, CorpusSpec, TestCase, generate_corpus, make_test_cases, split
from . import errors
from .errors import FormatError
from .experiment import held_out_specs, run_experiment
from .geometry import build_lattice_mesh, fibonacci_leads, load_bundle, save_bundle, synthesize_lead_field
from .inversion import EMConfig, MeasurementModel, em_infer, estimate_beta
from .svae import SVAE, SVAEConfig, ZPrior, estimate_z_prior, train


def _read_json(path):
    return json.loads(Path(path).read_text()) if path else {}


def _ints(text):
    return tuple(int(x) for x in text.split(","))


def _load_mesh(path):
    mesh, lf = load_bundle(path)
    return mesh, lf


def _load_ecg(path):
    tensors, meta = load_container(path)
    if "Y" not in tensors:
        raise FormatError(f"{path}: no tensor 'Y'")
    return tensors, meta


def cmd_geometry_build(a):
    mesh = build_lattice_mesh(_ints(a.dims), a.spacing)
    lf = synthesize_lead_field(mesh, fibonacci_leads(mesh, a.leads))
    save_bundle(a.out, mesh, lf, {"n_leads": a.leads})
    print(f"{mesh.node_count} nodes, {lf.H.shape[0]} leads -> {a.out}")


def cmd_sim_run(a):
    mesh, _ = _load_mesh(a.mesh)
    params = APParams(**_read_json(a.params))
    scar = ScarConfig.ball(mesh, a.scar_center, a.scar_radius) if a.scar_center is not None else ScarConfig()
    origins = [i for i in mesh.nodes_within(a.origin, a.pacing_radius) if i not in set(scar.scar_nodes)]
    tmp = simulate(mesh, params, PacingConfig(tuple(origins)), scar)
    save_container(a.out, {"U": tmp.U}, dict(tmp.metadata, dt_effective=tmp.dt_effective))
    print(f"TMP {tmp.U.shape} -> {a.out}")


def cmd_corpus_generate(a):
    mesh, lf = _load_mesh(a.mesh)
    spec = CorpusSpec.from_dict(_read_json(a.spec))
    corpus = generate_corpus(mesh, lf, spec, a.out)
    print(f"{len(corpus)} sequences ({len(corpus.skipped)} pairs skipped) -> {a.out}")


def cmd_corpus_cases(a):
    mesh, lf = _load_mesh(a.mesh)
    train_spec = Corpus.load(a.corpus).spec
    spec = held_out_specs(mesh, train_spec, a.n, a.seed)[a.setting]
    cases = make_test_cases(mesh, lf, spec, a.snr, a.setting, train_spec)
    out = Path(a.out)
    for c in cases:
        c.save(out / f"{c.case_id}.ntc")
    print(f"{len(cases)} {a.setting} cases -> {out}")


def cmd_vae_train(a):
    corpus = Corpus.load(a.corpus)
    cfg = dict(_read_json(a.config))
    cfg.setdefault("n_nodes", corpus[0].tmp.n_nodes)
    config = SVAEConfig(**cfg)
    train_set, val_set = (split(corpus, a.val_fraction, config.seed) if a.val_fraction
                          else (corpus, None))
    model, hist = train(train_set, config, val_set)
    meta = {"history": {k: v for k, v in hist.items()}, "corpus": str(a.corpus)}
    model.save(a.out, meta)
    if a.zprior_out:
        estimate_z_prior(model, train_set).save(a.zprior_out)
    print(f"final train ELBO {hist['train_elbo'][-1]:.2f} -> {a.out}")


def cmd_vae_prior(a):
    model, _ = SVAE.load(a.weights)
    estimate_z_prior(model, Corpus.load(a.corpus)).save(a.out)
    print(f"latent prior -> {a.out}")


def cmd_vae_sample(a):
    from .plotting import plot_samples
    model, _ = SVAE.load(a.weights)
    prior = ZPrior.load(a.prior)
    rng = np.random.default_rng(a.seed)
    samples = model.decode(prior.sample(rng, a.n)).M
    out = Path(a.plot)
    out.mkdir(parents=True, exist_ok=True)
    save_container(out / "samples.ntc", {"U": samples}, {"n": a.n, "seed": a.seed})
    plot_samples(out / "samples.png", samples)
    print(f"{a.n} samples -> {out}")


def cmd_infer_run(a):
    tensors, _ = _load_ecg(a.ecg)
    mesh, lf = _load_mesh(a.H)
    model, _ = SVAE.load(a.weights)
    prior = ZPrior.load(a.zprior)
    cfg = dict(_read_json(a.config))
    beta = estimate_beta(lf.H, tensors["Y"], cfg.pop("beta", None))
    res = em_infer(MeasurementModel(lf.H, beta), tensors["Y"], model, prior, EMConfig(**cfg))
    save_container(a.out, {"U_hat": res.posterior.U_hat, "Sigma_diag": res.posterior.Sigma_diag,
                           "Z_map": res.Z_map, "L_trace": np.array(res.L_trace),
                           "log_marginal": np.array(res.log_marginal, dtype=float)},
                   {"beta": beta, "converged": res.converged, "n_iters": res.n_iters})
    print(f"EM {'converged' if res.converged else 'stopped'} after {res.n_iters} iterations -> {a.out}")


def cmd_baseline(a):
    tensors, _ = _load_ecg(a.ecg)
    mesh, lf = _load_mesh(a.H)
    cfg = _read_json(a.config)
    if a.method == "greensite":
        rec = greensite_reconstruct(lf.H, tensors["Y"], GreensiteConfig(**cfg))
    else:
        rec = fixed_ep_reconstruct(lf.H, tensors["Y"], mesh, FixedEPConfig(**cfg))
    save_container(a.out, {"U_hat": rec.U}, rec.metadata)
    print(f"{a.method} reconstruction -> {a.out}")


def cmd_eval_run(a):
    mesh, lf = _load_mesh(a.mesh)
    cases = [TestCase.load(p) for p in sorted(Path(a.cases).glob("*.ntc"))]
    cases = [c for c in cases if c.setting_tag == a.setting]
    methods = a.methods.split(",")
    weights = SVAE.load(a.weights)[0] if a.weights else None
    prior = ZPrior.load(a.zprior) if a.zprior else None
    res = run_experiment(a.setting, methods, cases, mesh, lf, weights, prior, out_dir=a.out,
                         plots=not a.no_plots)
    print(f"{len(res.records)} records, {len(res.failures)} failures -> {a.out}")


def build_parser():
    p = argparse.ArgumentParser(prog="ecgi-vae", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    groups = p.add_subparsers(dest="group", required=True)

    g = groups.add_parser("geometry").add_subparsers(dest="cmd", required=True)
    c = g.add_parser("build")
    c.add_argument("--dims", default="8,8,4")
    c.add_argument("--spacing", type=float, default=1.0)
    c.add_argument("--leads", type=int, default=32)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_geometry_build)

    g = groups.add_parser("sim").add_subparsers(dest="cmd", required=True)
    c = g.add_parser("run")
    c.add_argument("--mesh", required=True)
    c.add_argument("--origin", type=int, required=True)
    c.add_argument("--pacing-radius", type=float, default=1.0)
    c.add_argument("--scar-center", type=int)
    c.add_argument("--scar-radius", type=float, default=2.0)
    c.add_argument("--params", help="JSON file with APParams fields")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_sim_run)

    g = groups.add_parser("corpus").add_subparsers(dest="cmd", required=True)
    c = g.add_parser("generate")
    c.add_argument("--spec", required=True)
    c.add_argument("--mesh", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_corpus_generate)
    c = g.add_parser("cases")
    c.add_argument("--mesh", required=True)
    c.add_argument("--corpus", required=True, help="training corpus directory")
    c.add_argument("--setting", choices=["unseen-scar", "unseen-origin", "unseen-both"], required=True)
    c.add_argument("--n", type=int, default=10)
    c.add_argument("--snr", type=float, default=25.0)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_corpus_cases)

    g = groups.add_parser("vae").add_subparsers(dest="cmd", required=True)
    c = g.add_parser("train")
    c.add_argument("--corpus", required=True)
    c.add_argument("--config")
    c.add_argument("--val-fraction", type=float, default=0.0)
    c.add_argument("--zprior-out")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_vae_train)
    c = g.add_parser("prior")
    c.add_argument("--weights", required=True)
    c.add_argument("--corpus", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_vae_prior)
    c = g.add_parser("sample")
    c.add_argument("--weights", required=True)
    c.add_argument("--prior", required=True)
    c.add_argument("--n", type=int, default=5)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--plot", required=True)
    c.set_defaults(func=cmd_vae_sample)

    g = groups.add_parser("infer").add_subparsers(dest="cmd", required=True)
    c = g.add_parser("run")
    c.add_argument("--ecg", required=True)
    c.add_argument("--weights", required=True)
    c.add_argument("--zprior", required=True)
    c.add_argument("--H", required=True, help="mesh bundle holding the lead field")
    c.add_argument("--config")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_infer_run)

    g = groups.add_parser("baseline").add_subparsers(dest="method", required=True)
    for name in ("greensite", "fixed-ep"):
        c = g.add_parser(name)
        c.add_argument("--ecg", required=True)
        c.add_argument("--H", required=True)
        c.add_argument("--config")
        c.add_argument("--out", required=True)
        c.set_defaults(func=cmd_baseline)

    g = groups.add_parser("eval").add_subparsers(dest="cmd", required=True)
    c = g.add_parser("run")
    c.add_argument("--setting", required=True)
    c.add_argument("--methods", default="proposed,greensite,fixed-ep")
    c.add_argument("--cases", required=True)
    c.add_argument("--mesh", required=True)
    c.add_argument("--weights")
    c.add_argument("--zprior")
    c.add_argument("--no-plots", action="store_true")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_eval_run)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    known = tuple(getattr(errors, n) for n in ("InvalidArgument", "GeometryError", "FormatError",
                                                 "ConfigurationError", "InvalidState", "SolverError",
                                                 "EstimationError", "NonFiniteError"))
    try:
        args.func(args)
    except known + (FileNotFoundError,) as exc:
        print(f"ecgi-vae: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

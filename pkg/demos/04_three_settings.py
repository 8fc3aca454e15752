# The three-setting comparison.
#
# Ten held-out cases for each of: unseen scar, unseen pacing site, and both
# unseen. Every method runs on every case; the per-case table, the
# mean/std summary, paired statistics and figures land in the output
# directory. Run 02_train_generative_model.py first.
import sys
from pathlib import Path

from ecgi_vae.corpus import Corpus, make_test_cases
from ecgi_vae.experiment import METHODS, format_table, held_out_specs, run_experiment
from ecgi_vae.geometry import build_lattice_mesh, synthesize_lead_field
from ecgi_vae.svae import SVAE, ZPrior

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output")
mesh = build_lattice_mesh()
lf = synthesize_lead_field(mesh)
model, _ = SVAE.load(out / "weights.ntc")
zprior = ZPrior.load(out / "zprior.ntc")
spec = Corpus.load(out / "corpus").spec

for tag, held in held_out_specs(mesh, spec, n_cases=10, seed=0).items():
    cases = make_test_cases(mesh, lf, held, 25.0, tag, spec)
    res = run_experiment(tag, list(METHODS), cases, mesh, lf, model, zprior,
                         out_dir=out / "results" / tag)
    print(format_table(res.summary))
    for pair, stats in res.paired[tag].items():
        t = stats["nrmse"]["t"]
        print(f"  {pair}: mean nrmse difference {stats['nrmse']['mean_diff']:+.3f}"
              + (f", t = {t:.2f}" if t is not None else ""))
    print()
print(f"tables and figures -> {out / 'results'}")

# Reconstructing TMP from a noisy ECG.
#
# Takes one held-out case (new pacing site and new scar), estimates the
# noise level, and compares EM inference under the learned prior with the
# two classical baselines. Run 02_train_generative_model.py first.
import sys
from pathlib import Path

from ecgi_vae.apsim import TMPSequence
from ecgi_vae.baselines import fixed_ep_reconstruct, greensite_reconstruct
from ecgi_vae.corpus import Corpus, make_test_cases
from ecgi_vae.experiment import DEFAULT_RULES, held_out_specs
from ecgi_vae.geometry import build_lattice_mesh, synthesize_lead_field
from ecgi_vae.inversion import EMConfig, MeasurementModel, em_infer, estimate_beta
from ecgi_vae.metrics import detect_scar, dice, nrmse, origin_error
from ecgi_vae.plotting import plot_case
from ecgi_vae.svae import SVAE, ZPrior

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output")
mesh = build_lattice_mesh()
lf = synthesize_lead_field(mesh)
model, _ = SVAE.load(out / "weights.ntc")
zprior = ZPrior.load(out / "zprior.ntc")
spec = Corpus.load(out / "corpus").spec

held = held_out_specs(mesh, spec, n_cases=1, seed=3)["unseen-both"]
case = make_test_cases(mesh, lf, held, snr_db=25.0, setting_tag="unseen-both", training_spec=spec)[0]
print(f"case {case.case_id}: origin {case.origin_true}, scar of {len(case.scar_true)} nodes")

beta = estimate_beta(lf.H, case.ecg.Y)
print(f"estimated noise precision {beta:.3g}")

res = em_infer(MeasurementModel(lf.H, beta), case.ecg.Y, model, zprior, EMConfig())
lm = res.log_marginal
print(f"EM: {res.n_iters} iterations, converged={res.converged}, "
      f"log p(Y, Z) {lm[0]:.1f} -> {lm[-1]:.1f}")

dte = case.tmp_true.dt_effective
recons = {
    "proposed": res.posterior.U_hat,
    "greensite": greensite_reconstruct(lf.H, case.ecg.Y, dt_effective=dte).U,
    "fixed-ep": fixed_ep_reconstruct(lf.H, case.ecg.Y, mesh).U,
}
scars = {}
for name, U in recons.items():
    rec = TMPSequence(U, dte)
    scars[name] = detect_scar(rec, DEFAULT_RULES[name])
    oe = origin_error(rec, case.origin_true, mesh)
    print(f"{name:10s} nrmse {nrmse(U, case.tmp_true.U):.3f}  "
          f"dice {dice(scars[name], case.scar_true):.3f}  "
          f"origin error {'undefined' if oe is None else f'{oe:.2f} mm'}")

plot_case(out / "03_case.png", case, {k: TMPSequence(v, dte) for k, v in recons.items()}, scars,
          {"proposed": {"log_marginal": lm}}, mesh)
print(f"figure -> {out / '03_case.png'}")

# Learning a generative model of TMP sequences.
#
# Simulates the desk corpus (12 pacing sites x 6 tissue configurations),
# trains the sequential VAE and fits the Gaussian latent prior used later
# at inference time. Pass the number of epochs as the second argument for a
# quicker run (the default matches the test configuration).
import sys
import time
from pathlib import Path

import numpy as np

from ecgi_vae.corpus import generate_corpus, split
from ecgi_vae.experiment import desk_training_spec
from ecgi_vae.geometry import build_lattice_mesh, synthesize_lead_field
from ecgi_vae.plotting import plot_samples
from ecgi_vae.svae import SVAEConfig, estimate_z_prior, train

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output")
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 200
out.mkdir(parents=True, exist_ok=True)

mesh = build_lattice_mesh()
lf = synthesize_lead_field(mesh)
spec = desk_training_spec(mesh)
corpus = generate_corpus(mesh, lf, spec, out / "corpus")
print(f"{len(corpus)} sequences ({len(corpus.skipped)} pairs skipped: origin inside the scar)")

# Hold out a few sequences to watch the validation ELBO.
train_set, val_set = split(corpus, 0.1, seed=0)
config = SVAEConfig(n_nodes=mesh.node_count, epochs=epochs)

t0 = time.perf_counter()


def report(epoch, rec, model):
    if epoch % 20 == 0 or epoch == config.epochs - 1:
        print(f"epoch {epoch:3d}  train ELBO {rec['train_elbo']:9.1f}  "
              f"val ELBO {rec['val_elbo']:9.1f}  KL weight {rec['kl_weight']:.2f}")


model, history = train(train_set, config, val_set, callback=report)
print(f"trained in {time.perf_counter() - t0:.0f}s")

X = train_set.X
rmse = np.sqrt(np.mean((model.decode(model.encode(X).M).M - X) ** 2))
print(f"reconstruction RMSE per entry: {rmse:.3f}")

# The prior over Z moment-matches the mixture of encoder posteriors.
zprior = estimate_z_prior(model, corpus)
model.save(out / "weights.ntc", {"history": history})
zprior.save(out / "zprior.ntc")

samples = model.decode(zprior.sample(np.random.default_rng(0), 4)).M
print(f"prior samples: {100 * np.mean((samples > -0.3) & (samples < 1.3)):.1f}% of entries in [-0.3, 1.3]")
plot_samples(out / "02_samples.png", samples, reference=X[0])
print(f"weights, prior and figure -> {out}")

# Excitation waves on a small lattice heart.
#
# Builds the 8 x 8 x 4 lattice with its lead field, paces one corner and
# watches the wave go around a scar. Activation times, action potential
# durations and the scar detector are all computed from the recorded TMP.
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from ecgi_vae.apsim import APParams, PacingConfig, ScarConfig, activation_times, apd, simulate
from ecgi_vae.geometry import build_lattice_mesh, synthesize_lead_field
from ecgi_vae.metrics import detect_scar

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output")
out.mkdir(parents=True, exist_ok=True)

mesh = build_lattice_mesh((8, 8, 4), spacing=1.0)
lf = synthesize_lead_field(mesh)
print(f"{mesh.node_count} nodes, {len(mesh.edges)} edges, H is {lf.H.shape}")

# Pace a small ball at node 0 and put a scar of radius 2 in the middle of
# the second layer.
params = APParams()
scar = ScarConfig.ball(mesh, 100, 2.0)
pacing = PacingConfig(mesh.nodes_within(0, 1.0))
tmp = simulate(mesh, params, pacing, scar)
print(f"TMP {tmp.U.shape}, {tmp.duration:.1f} time units, u in [{tmp.U.min():.3f}, {tmp.U.max():.3f}]")

t_act = activation_times(tmp)
durations = apd(tmp)
healthy = np.isfinite(t_act)
print(f"last activation at {t_act[healthy].max():.1f}, median APD {np.median(durations[healthy]):.1f}")
print(f"scar has {len(scar.scar_nodes)} nodes; detector finds {len(detect_scar(tmp))}")

# Body-surface potentials are just H @ U.
Y = lf.H @ tmp.U

fig, ax = plt.subplots(1, 3, figsize=(13, 3.5))
for i in (0, 40, 150, 255):
    ax[0].plot(np.arange(tmp.n_times) * tmp.dt_effective, tmp.U[i], label=f"node {i}")
ax[0].set_title("TMP at a few nodes")
ax[0].legend(fontsize=7)
layer = np.where(np.isfinite(t_act), t_act, np.nan).reshape(4, 8, 8)[1]
im = ax[1].imshow(layer, origin="lower", cmap="viridis")
fig.colorbar(im, ax=ax[1])
ax[1].set_title("activation time, layer z=1 (blank = scar)")
ax[2].plot(np.arange(tmp.n_times) * tmp.dt_effective, Y[:6].T)
ax[2].set_title("six ECG leads")
fig.tight_layout()
fig.savefig(out / "01_propagation.png", dpi=110)
print(f"figure -> {out / '01_propagation.png'}")

"""Named experiment configurations, written in the config-file syntax."""

from __future__ import annotations

from .errors import ConfigError
from . import config as cfgmod

# Two-moons at desk scale. Same schedule shapes as the image presets (lr
# warmup/decay, eps ramp over epochs 10-35, x10 weight ramps over 20-80) with
# the eps ramp in absolute units and the manifold weights scaled down: the
# image-scale weights diverge under lr 0.1 when eps is 10% of the data range.
MOONS = """
dataset = two-moons
dataset.size = 1000
dataset.noise = 0.15
model = 2,64,64,2
epochs = 100
batch_size = 50
seed = 0
alpha = 8
gamma_k = 5e-4
schedule.lr = 0:0,40:0.1,80:0.005,100:0
schedule.eps = 10:0.025,35:0.1
gamma_i.start = 0.05
gamma_i.factor = 10
gamma_i.ramp = 20:80
gamma_h.start = 5
gamma_h.factor = 10
gamma_h.ramp = 20:80
"""

MOONS_BASELINE = MOONS.replace("gamma_i.start = 0.05", "gamma_i.start = 0").replace(
    "gamma_h.start = 5", "gamma_h.start = 0"
)

# Image presets: values in /255 pixel units; need a raw-image-grid CSV.
IMAGE_LARGE = """
dataset = raw-image-grid
dataset.path = images.csv
model = 3072,512,512,10
epochs = 100
batch_size = 128
seed = 0
alpha = 8
gamma_k = 5e-4
schedule.lr = 0:0,40:0.1,80:0.005,100:0
schedule.eps = 10:2/255,35:8/255
gamma_i.start = 0.8
gamma_i.factor = 10
gamma_i.ramp = 20:80
gamma_h.start = 2400
gamma_h.factor = 10
gamma_h.ramp = 20:80
"""

IMAGE_SMALL = IMAGE_LARGE.replace("gamma_i.start = 0.8", "gamma_i.start = 0.4").replace(
    "gamma_h.start = 2400", "gamma_h.start = 9000"
).replace("model = 3072,512,512,10", "model = 3072,128,10")

CONVERGE_CIRCLE = """
manifold = circle
n_grid = 500
eps_grid = 0.05,0.1,0.2
c = 2
s = 0.5
seed = 0
seeds = 10
probes = 50
norm = l2
dim = 2
"""

AUDIT = """
nodes = 10
dim = 2
s = median
m_grid = 1,4,16
draws = 100000
seed = 0
"""

REGIONS = """
dataset = two-moons
dataset.size = 1000
dataset.noise = 0.15
pairs = 50
resolution = 301
seed = 0
"""

EVAL_MOONS = """
dataset = two-moons
dataset.size = 1000
dataset.noise = 0.15
eps = 0.1
steps = 20
restarts = 10
step_size = 0.0125
seed = 0
"""

PRESETS: dict[str, dict[str, str]] = {
    "train": {"moons": MOONS, "moons-baseline": MOONS_BASELINE, "image-large": IMAGE_LARGE, "image-small": IMAGE_SMALL},
    "eval": {"moons": EVAL_MOONS},
    "laplacian-converge": {"circle": CONVERGE_CIRCLE},
    "sparsify-audit": {"default": AUDIT},
    "regions": {"moons": REGIONS},
}


def get(subcommand: str, name: str) -> dict[str, str]:
    try:
        text = PRESETS[subcommand][name]
    except KeyError:
        names = ", ".join(sorted(PRESETS.get(subcommand, {})))
        raise ConfigError(f"no preset {name!r} for {subcommand} (available: {names})") from None
    return cfgmod.parse_text(text, f"<preset {name}>")

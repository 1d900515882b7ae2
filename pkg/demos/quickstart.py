"""Certify a small synthetic classifier end to end.

Writes a model, a generator and a run configuration into a work directory,
then drives the command-line tool: certify, evaluate the curve, mine
counterexamples.

    python demos/quickstart.py [workdir]
"""
import sys
from pathlib import Path

from acecert.cli import main
from acecert.distribution import save_generator
from acecert.model import save_model
from acecert.synthetic import template_generator, toy_mlp

RUN = """model = "model.json"
generator = "generator.json"
N = 200
M = 200
N0 = 40
radius = 0.5
seed = 2024
rho = 0.05
t_values = [1e-2, 1e-6, 1e-10]
mine_per_nominal = 3
mine_merge_radius = 0.05
"""


def step(title, argv):
    print(f"\n$ acecert {' '.join(argv)}")
    code = main(argv)
    if code != 0:
        sys.exit(f"{title} failed with exit code {code}")


def main_demo(work: Path):
    work.mkdir(parents=True, exist_ok=True)
    gen = template_generator()
    save_generator(gen, work / "generator.json")
    save_model(toy_mlp(gen), work / "model.json")
    (work / "run.toml").write_text(RUN)
    print(f"wrote model, generator and run.toml to {work}")

    cfg = str(work / "run.toml")
    step("certify", ["certify", "--config", cfg, "--out", str(work / "certify")])
    step("curve", ["curve", str(work / "certify" / "curve.csv"), "--t", "1e-15,1e-5,1e-3,1e-1"])
    step("mine", ["mine", "--config", cfg, "--out", str(work / "mine")])
    print(f"\nartifacts and manifests are under {work}")


if __name__ == "__main__":
    main_demo(Path(sys.argv[1]) if len(sys.argv) > 1 else Path("demo_out"))

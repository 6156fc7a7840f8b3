#!/usr/bin/env python3
"""Plots morphsim run outputs as SVG files.

  plot.py curves RUN_DIR/train_log.csv --out curves.svg
  plot.py history RUN_DIR/history.csv --out history.svg
  plot.py poses RUN_DIR/trajectory.csv --out poses/ [--every 15]

Pose frames draw the default character's skeleton; other topologies fall
back to plain keypoint markers.
"""

import argparse
import os

import matplotlib

matplotlib.use("svg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

# Keypoint 0 is the root, keypoint i + 1 the distal end of link i.
DEFAULT_EDGES = [(0, 1), (0, 2), (2, 3), (3, 4), (0, 5), (5, 6), (6, 7)]
SHOULDER_ATTACH = 0.7  # along the torso
ARM_TIPS = (8, 9)


def curves(path, out):
  log = pd.read_csv(path)
  fig, axes = plt.subplots(3, 1, figsize=(7, 8), sharex=True)
  axes[0].plot(log["iteration"], log["mean_reward"])
  axes[0].set_ylabel("mean reward")
  axes[1].plot(log["iteration"], log["success_rate"])
  axes[1].set_ylabel("episode success")
  axes[2].semilogy(log["iteration"], log["approx_kl"].clip(lower=1e-8))
  axes[2].set_ylabel("approx KL")
  axes[2].set_xlabel("iteration")
  fig.tight_layout()
  fig.savefig(out)


def history(path, out):
  h = pd.read_csv(path)
  groups = list(h.columns[4:-3])
  fig, axes = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
  axes[0].plot(h["iteration"], h["mean_return"], label="sampled return")
  ev = h.dropna(subset=["eval_reward"])
  axes[0].plot(ev["iteration"], ev["eval_reward"], "o-", label="mean-design reward")
  axes[0].legend()
  for g in groups:
    axes[1].plot(h["iteration"], h[g], label=g)
  axes[1].set_ylabel("design mean")
  axes[1].set_xlabel("iteration")
  axes[1].legend()
  fig.tight_layout()
  fig.savefig(out)


def draw(ax, xs, ys, style, label):
  if len(xs) != 10:
    ax.plot(xs, ys, style[0] + "o", label=label)
    return
  for a, b in DEFAULT_EDGES:
    ax.plot([xs[a], xs[b]], [ys[a], ys[b]], style, lw=2)
  sx = xs[0] + SHOULDER_ATTACH * (xs[1] - xs[0])
  sy = ys[0] + SHOULDER_ATTACH * (ys[1] - ys[0])
  for tip in ARM_TIPS:
    ax.plot([sx, xs[tip]], [sy, ys[tip]], style, lw=2)
  ax.plot([], [], style, label=label)


def poses(path, out, every):
  t = pd.read_csv(path)
  k = sum(1 for c in t.columns if c.startswith("sim_x"))
  os.makedirs(out, exist_ok=True)
  for i in range(0, len(t), every):
    row = t.iloc[i]
    fig, ax = plt.subplots(figsize=(5, 5))
    for prefix, style, label in (("ref", "k--", "reference"), ("sim", "b-", "simulated")):
      xs = [row[f"{prefix}_x{j}"] for j in range(k)]
      ys = [row[f"{prefix}_y{j}"] for j in range(k)]
      draw(ax, xs, ys, style, label)
    ax.axhline(0.0, color="0.6", lw=1)
    ax.set_aspect("equal")
    ax.set_title(f"frame {int(row['frame'])}  t={row['time']:.2f} s  {row['termination']}")
    ax.legend(loc="upper right")
    fig.savefig(os.path.join(out, f"frame_{int(row['frame']):05d}.svg"))
    plt.close(fig)


def main():
  p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
  p.add_argument("kind", choices=["curves", "history", "poses"])
  p.add_argument("csv")
  p.add_argument("--out", required=True)
  p.add_argument("--every", type=int, default=15, help="pose frame stride")
  a = p.parse_args()
  if a.kind == "curves":
    curves(a.csv, a.out)
  elif a.kind == "history":
    history(a.csv, a.out)
  else:
    poses(a.csv, a.out, a.every)


if __name__ == "__main__":
  main()

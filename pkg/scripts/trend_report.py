"""Run the recovery-energy trend and the rigidity probe, then print a short summary.

    python3 scripts/trend_report.py --out-dir runs/
"""
import argparse
import csv
import json
from pathlib import Path

from dislolab.cli import main as cli


def summarize_trend(run: Path) -> None:
    data = json.loads(run.read_text())
    print("eps          E_eps        E_crit       gap")
    for r in data["records"]:
        print(f"{r['eps']:<12.0e} {r['E_eps']:<12.6f} {r['E_crit']:<12.6f} {r['gap']:.4f}")
    fit = data["fit"]
    print(f"fit C/|log eps|: C = {fit['C']:.4f}, R^2 = {fit['r_squared']:.3f}, monotone = {fit['monotone']}")


def summarize_rigidity(table: Path) -> None:
    with open(table) as fh:
        rows = list(csv.DictReader(fh))
    by_kind = {}
    for r in rows:
        by_kind.setdefault(r["kind"], []).append(float(r["ratio"]))
    for kind, ratios in sorted(by_kind.items()):
        print(f"{kind:<12} n={len(ratios):<3} ratio min {min(ratios):.3f} max {max(ratios):.3f}")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", default="runs")
    ap.add_argument("--grid", type=int, default=256)
    ap.add_argument("--seeds", type=int, default=20)
    args = ap.parse_args()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cli(["gamma-run", "--grid", str(args.grid), "--out", str(out / "trend.json")]) != 0:
        raise SystemExit("gamma-run failed")
    if cli(["rigidity-probe", "--seeds", str(args.seeds), "--out", str(out / "rigidity.csv")]) != 0:
        raise SystemExit("rigidity-probe failed")
    summarize_trend(out / "trend.json")
    summarize_rigidity(out / "rigidity.csv")


if __name__ == "__main__":
    main()

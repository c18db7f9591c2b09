#!/usr/bin/env python3
"""Convert a MATPOWER-style test case into a ropdf case bundle directory.

Utility script, not part of the tested surface. Requires `pypower`.

Fixture conventions (see data/cases/README.md):
  * the equilibrium (v*, delta*) comes from an AC OPF solve;
  * G, B are the bus admittance matrix with each load folded onto the
    diagonal as a constant impedance, y_L = (P_d - j Q_d) / v*^2;
  * p_m = p_e(v*, delta*), so the equilibrium is an exact fixed point
    (p_m equals the dispatched generation at generator buses and is zero at
    pure load buses);
  * every bus carries inertia h and damping d (uniform by default);
  * ratings: explicit overrides first, then rateA / baseMVA when a finite
    rateA is given, otherwise a thermal limit |y| * vmax * c_max with a
    60 degree angle-difference cap.

Usage:
  make_case_bundle.py case9 out/case9 --rating 4-9=1.0 --rating 7-8=1.0
"""

import argparse
import math
import pathlib

import numpy as np
from pypower import api
from pypower.ext2int import ext2int


def thermal_limit(branch, vmax_f, vmax_t):
    r, x = branch[2], branch[3]
    y_mag = 1.0 / abs(complex(r, x))
    theta_max = math.radians(60.0)
    m_vmax = max(vmax_f, vmax_t)
    c_max = math.sqrt(vmax_f**2 + vmax_t**2 - 2.0 * vmax_f * vmax_t * math.cos(theta_max))
    return y_mag * m_vmax * c_max


def fmt(x):
    return repr(float(x))


def stiffness_check(G, B, v, delta, h, d, dt):
    n = len(v)
    K = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            dij = delta[i] - delta[j]
            K[i, j] = v[i] * v[j] * (G[i, j] * math.sin(dij) - B[i, j] * math.cos(dij))
        K[i, i] = -K[i].sum()
    A = np.zeros((2 * n, 2 * n))
    A[:n, :n] = np.diag(-d / (2 * h))
    A[:n, n:] = -np.diag(1.0 / (2 * h)) @ K
    A[n:, :n] = np.eye(n)
    lam = np.linalg.eigvals(A)
    return np.abs(1.0 + lam * dt).max()


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("case")
    ap.add_argument("out")
    ap.add_argument("--inertia", type=float, default=1.0)
    ap.add_argument("--damping", type=float, default=1.5)
    ap.add_argument("--rating", action="append", default=[])
    args = ap.parse_args()

    ppc = getattr(api, args.case)()
    res = api.runopf(ppc, api.ppoption(VERBOSE=0, OUT_ALL=0))
    if not res["success"]:
        raise SystemExit("OPF failed")
    ri = ext2int(res)
    base = ri["baseMVA"]
    Y, _, _ = api.makeYbus(base, ri["bus"], ri["branch"])
    Y = Y.toarray()
    n = Y.shape[0]
    bus = ri["bus"]
    v = bus[:, 7].copy()
    delta = np.deg2rad(bus[:, 8])
    G = Y.real.copy()
    B = Y.imag.copy()
    G[np.diag_indices(n)] += bus[:, 2] / base / v**2
    B[np.diag_indices(n)] -= bus[:, 3] / base / v**2
    G = 0.5 * (G + G.T)
    B = 0.5 * (B + B.T)
    D = delta[:, None] - delta[None, :]
    p_m = ((G * np.cos(D) + B * np.sin(D)) @ v) * v
    h = np.full(n, args.inertia)
    d = np.full(n, args.damping)

    overrides = {}
    for item in args.rating:
        key, val = item.split("=")
        a, b = (int(s) for s in key.split("-"))
        overrides[(min(a, b), max(a, b))] = float(val)

    edges = {}
    for br in ri["branch"]:
        a, b = int(br[0]) + 1, int(br[1]) + 1
        key = (min(a, b), max(a, b))
        if key in overrides:
            rating = overrides[key]
        elif 0.0 < br[5] < 9900.0:
            rating = br[5] / base
        else:
            rating = thermal_limit(br, bus[key[0] - 1, 11], bus[key[1] - 1, 11])
        # parallel circuits merge into one edge; keep the smaller rating
        edges[key] = min(rating, edges.get(key, math.inf))

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    src = f"# generated by tools/make_case_bundle.py from {args.case}\n"
    with open(out / "network", "w") as f:
        f.write(src)
        f.write(f"n {n}\n")
        for (a, b) in sorted(edges):
            f.write(f"edge {a} {b} {fmt(G[a-1, b-1])} {fmt(B[a-1, b-1])}\n")
        for name, M in (("G", G), ("B", B)):
            for i in range(n):
                f.write(f"{name} {i+1} " + " ".join(fmt(x) for x in M[i]) + "\n")
    with open(out / "machines", "w") as f:
        f.write(src)
        f.write("# machine <bus> <h> <d> <p_m>\n")
        f.write("omega_R 1.0\n")
        for i in range(n):
            f.write(f"machine {i+1} {fmt(h[i])} {fmt(d[i])} {fmt(p_m[i])}\n")
    with open(out / "equilibrium", "w") as f:
        f.write(src)
        f.write("# bus <bus> <v_star> <delta_star (rad)>\n")
        for i in range(n):
            f.write(f"bus {i+1} {fmt(v[i])} {fmt(delta[i])}\n")
    with open(out / "ratings", "w") as f:
        f.write(src)
        f.write("# rating <i> <j> <u_max>\n")
        for (a, b) in sorted(edges):
            f.write(f"rating {a} {b} {fmt(edges[(a, b)])}\n")

    for dt in (1e-2, 5e-3):
        amp = stiffness_check(G, B, v, delta, h, d, dt)
        print(f"{args.case}: n={n} edges={len(edges)} max|1+lambda*dt| at dt={dt}: {amp:.6f}")


if __name__ == "__main__":
    main()

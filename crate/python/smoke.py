"""Smoke test for the Python bindings.

Build the extension and run this script from the repository root:

    cargo build -p ergodic-interval-py --release
    python3 python/smoke.py
"""

import importlib.util
import math
import pathlib
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load():
    for profile in ("release", "debug"):
        for name in ("libergodic_interval_py.so", "libergodic_interval_py.dylib", "ergodic_interval_py.dll"):
            lib = ROOT / "target" / profile / name
            if lib.exists():
                suffix = ".pyd" if name.endswith(".dll") else ".so"
                dst = pathlib.Path(tempfile.mkdtemp()) / ("ergodic_interval" + suffix)
                shutil.copy(lib, dst)
                spec = importlib.util.spec_from_file_location("ergodic_interval", dst)
                mod = importlib.util.module_from_spec(spec)
                spec.loader.exec_module(mod)
                return mod
    sys.exit("extension not built; run `cargo build -p ergodic-interval-py --release` first")


def main():
    ei = load()

    cheb = ei.Map.builtin("chebyshev")
    assert abs(cheb(0.25) - 0.75) < 1e-15
    assert cheb.is_continuous and cheb.critical_points == [(0.5, 2.0, 2.0)]

    diag = ei.diagnose(cheb, horizon=50)
    rec = diag["records"][0]
    assert abs(rec["dmin"][1] - 0.17678) < 1e-5
    assert abs(rec["log_deriv"][4] - 5 * math.log(4)) < 1e-9
    print("diagnose:", diag["predicted"]["regime"])

    fit = ei.classify_decay([0.5 * 4 ** (-n / 3) for n in range(1, 201)])
    print("classify_decay:", fit["regime"])

    t13 = ei.Map.tent(1.3)
    cyc = ei.cycles(t13, minimal_only=True)
    assert len(cyc) == 1 and cyc[0]["period"] == 2
    g = ei.renormalize(t13)
    assert abs(abs(g.deriv(0.3)) - 1.69) < 1e-9

    ind = ei.induce(ei.Map.tent(2.0))
    assert ind["leak_fraction"] <= 1e-3
    print("induce: %d elements" % len(ind["induced"]["elements"]))

    mk = ei.markov(cheb)
    assert mk["coverage"] >= 0.999 and mk["return_tail"]["matches"]
    print("markov: coverage %.5f" % mk["coverage"])

    d = ei.density(cheb, bins=1024)
    assert abs(sum(d["rho"]) / d["bins"] - 1.0) < 1e-12

    corr = ei.correlations(cheb, "sqrt_dist", seed=1)
    assert corr["matches"]
    print("correlations:", corr["fit"]["regime"])

    try:
        ei.Map.builtin("nope")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown builtin accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()

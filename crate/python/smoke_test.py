"""Smoke test for the vmip extension.

Build with
    cargo build -p vmip-python --release --features extension-module
    cp target/release/libvmip.so vmip.so
then run with that directory on PYTHONPATH.
"""

import json
import math

import vmip


def main():
    assert vmip.shrink(3.0, 1.0) == 2.0
    assert vmip.shrink(-0.5, 1.0) == 0.0
    assert abs(vmip.choose_c(0.8) - 0.1) < 1e-15

    ev = vmip.eigenvalues([[2.0, 1.0], [1.0, 2.0]])
    assert all(abs(a - b) < 1e-12 for a, b in zip(ev, [1.0, 3.0]))

    b1 = vmip.bfgs_update_b([[1.0, 0.0], [0.0, 1.0]], [1.0, 0.0], [2.0, 0.0])
    assert abs(b1[0][0] - 2.0) < 1e-12 and abs(b1[1][1] - 1.0) < 1e-12

    toy = vmip.Problem.generate("toy")
    x, y, lam = toy.oracle_solve()
    assert abs(x[0] - 1.0) < 1e-12 and abs(y[0] - 1.0) < 1e-12

    qq = vmip.Problem.generate("qq", n=20, rows=12, seed=7)
    again = vmip.Problem.from_json(qq.to_json())
    assert again.fingerprint() == qq.fingerprint()
    assert (qq.n, qq.m) == (20, 12)

    for strategy in ("zero", "psd", "fixed-indef", "bfgs"):
        out = vmip.solve(qq, strategy=strategy)
        assert out.status == "converged", out
        assert max(out.kkt) <= 1e-6
        cert = json.loads(out.certification_json)
        assert cert["summary"]["pass"] == out.certified
        print(f"{strategy:12s} iters={out.iterations:5d} certified={out.certified}")

    out = vmip.solve(toy, strategy="zero", diagnostics=True)
    assert out.audit is not None and all(math.isfinite(r[0]) for r in out.audit)

    try:
        vmip.solve(qq, strategy="psd", r_factor=0.5)
    except ValueError:
        pass
    else:
        raise AssertionError("r_factor < 1 accepted")

    print("ok")


if __name__ == "__main__":
    main()

"""Smoke test for the homog Python extension."""

import math

import homog


def main():
    cell = homog.solve_cell(0.25, n=32)
    d = cell.tensor
    assert 0.0 < d[0][0] < cell.theta <= 1.0, d
    assert abs(d[0][0] - d[1][1]) < 1e-8
    assert abs(d[0][1]) < 1e-8
    print(cell)

    csv = homog.build_table([0.1, 0.15, 0.2, 0.25, 0.3], n=32)
    theta, d11, d12, d21, d22 = homog.table_lookup(csv, 0.2)
    assert abs(theta - (1.0 - math.pi * 0.04)) < 0.02
    assert abs(d12) < 1e-8 and abs(d21) < 1e-8

    medium = homog.Medium(0.25, 1.0 / 64.0)
    nx, ny = medium.shape
    assert medium.num_inclusions > 0
    assert any(medium.low_mask())
    states = medium.run_micro([0.0, 1.0 / 32.0], t_end=1.0 / 32.0, boundary=1.0, initial=1.0)
    assert len(states) == 2 and len(states[-1][1]) == nx * ny
    assert max(abs(v - 1.0) for v in states[-1][1]) < 1e-9

    macro = homog.run_twoscale([0.0, 1.0 / 32.0], n=32, h_macro=1.0 / 16.0, m=4, t_end=1.0 / 32.0, dt=1.0 / 64.0)
    assert max(map(abs, macro[-1][1])) < max(map(abs, macro[0][1]))

    p, c = homog.rate_fit([(e, 0.3 * e**0.5) for e in (0.25, 0.125, 0.0625)])
    assert abs(p - 0.5) < 1e-12 and abs(c - 0.3) < 1e-12

    rows = homog.transport_residuals([16, 32])
    assert abs(rows[0][1] / rows[1][1] - 2.0) < 0.2

    print("smoke test ok")


if __name__ == "__main__":
    main()

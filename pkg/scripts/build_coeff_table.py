"""Build the link-length coefficient table shipped as package data.

Runs typical-cell simulation at each kappa grid point for every street-model
family, fits the truncated Weibull by maximum likelihood, and smooths the
coefficients with cubic polynomials in log(kappa). Slow (tens of minutes);
rerun only when the samplers change. Also exposed as `fibrecast calibrate`.
"""
import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from fibrecast.calibration import write_coefficient_table

if __name__ == "__main__":
    out = pathlib.Path(__file__).resolve().parents[1] / "src/fibrecast/data/link_length_coeffs.json"
    n_links = int(sys.argv[1]) if len(sys.argv) > 1 else 100000
    print(f"calibrating -> {out} with n_links={n_links}", flush=True)
    write_coefficient_table(str(out), n_links=n_links, verbose=True)
    print("done", flush=True)

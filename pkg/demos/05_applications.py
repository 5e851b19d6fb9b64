"""
Fitting the two applications from user-supplied data
=====================================================

The medical-expenditure (MEPS outpatient) and school-investment (FNDE)
datasets cannot be redistributed.  Given a CSV with the variables named in
``demos/configs``, this script fits the classical Heckman-normal model
(constant dispersion and correlation), the generalized normal model and the
generalized t model, then prints the information criteria and the t-model
estimates.

    python3 demos/05_applications.py meps   path/to/meps.csv
    python3 demos/05_applications.py fnde   path/to/fnde.csv

Without arguments it prints the expected columns.  The same fits are
available from the command line, e.g.
``symheckman diagnose --config demos/configs/meps.json``.
"""

import json
import sys
from pathlib import Path

from symheckman import cli, diagnose, estimate

HERE = Path(__file__).resolve().parent / "configs"


def constant_blocks(model):
    """Same columns, intercept-only dispersion and correlation."""
    out = dict(model)
    out["dispersion_covariates"] = []
    out["correlation_covariates"] = []
    return out


def main(argv):
    if len(argv) != 2 or argv[0] not in ("meps", "fnde"):
        for name in ("meps", "fnde"):
            model = json.loads((HERE / ("%s.json" % name)).read_text())["model"]
            print("%s: needs columns %s"
                  % (name, ", ".join(cli.ModelColumns.from_mapping(model).required_columns())))
        return 2
    config = json.loads((HERE / ("%s.json" % argv[0])).read_text())
    model = config["model"]
    fits, labels = [], []
    for label, m, gen in (("CHN", constant_blocks(model), "normal"),
                          ("GHN", model, "normal"),
                          ("GHt", model, "t")):
        data = cli.ingest_csv(argv[1], m)
        fit = estimate.fit(cli.model_spec_for(gen), data, config.get("options"))
        fits.append(fit)
        labels.append(label)
    print(diagnose.format_comparison(diagnose.compare_models(fits, labels)))
    print()
    for row in fits[-1].table():
        print("%-28s %10.4f %9.4f %8.2f %10s"
              % (row["name"], row["estimate"], row["std_error"], row["z"],
                 cli.render_p(row["p_value"])))
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))

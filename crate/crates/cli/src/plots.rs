//! Matplotlib scripts for the CSV artifacts. The scripts are data-driven: they read the
//! CSV next to them and show or save the figure when run.

const HEADER: &str = "import csv\nimport sys\nfrom pathlib import Path\n\nimport matplotlib.pyplot as plt\n\nHERE = Path(__file__).resolve().parent\n\n\ndef rows(name):\n    with open(HERE / name, newline=\"\") as f:\n        return list(csv.DictReader(f))\n\n\ndef finish(stem):\n    if len(sys.argv) > 1:\n        plt.savefig(sys.argv[1])\n    else:\n        plt.show()\n\n\n";

fn body(name: &str) -> Option<String> {
    let b = match name {
        "convergence.csv" => "r = rows(\"convergence.csv\")\nplt.loglog([float(x[\"dx\"]) for x in r], [float(x[\"l2_error\"]) for x in r], \"o-\")\nplt.xlabel(\"dx\")\nplt.ylabel(\"L2 error\")\n",
        "decay.csv" => "r = rows(\"decay.csv\")\nfor case in sorted({x[\"case\"] for x in r}, key=int):\n    s = [x for x in r if x[\"case\"] == case]\n    plt.semilogy([1 / float(x[\"h\"]) for x in s], [float(x[\"h2\"]) for x in s], \"o-\", label=f\"case {case} ({s[0]['tag']})\")\nplt.xlabel(\"1/h\")\nplt.ylabel(\"H2 norm of remainder\")\nplt.legend()\n",
        "inversion.csv" => "r = rows(\"inversion.csv\")\nplt.loglog([float(x[\"h\"]) for x in r], [float(x[\"l2_error\"]) for x in r], \"o-\")\nplt.xlabel(\"h\")\nplt.ylabel(\"L2 inversion error\")\n",
        "linearization.csv" => "r = rows(\"linearization.csv\")\nplt.bar([x[\"sample\"] for x in r], [float(x[\"order\"]) for x in r])\nplt.axhline(2, color=\"k\")\nplt.ylabel(\"Frechet remainder order\")\n",
        "duality.csv" => "r = rows(\"duality.csv\")\nkeys = [k for k in r[0] if k.startswith(\"gap_\")]\nfor k in keys:\n    plt.semilogy([x[\"sample\"] for x in r], [float(x[k]) for x in r], \"o\", label=k)\nplt.ylabel(\"relative duality gap\")\nplt.legend()\n",
        "strip_errors.csv" => "r = rows(\"strip_errors.csv\")\nfor c in dict.fromkeys(x[\"coefficient\"] for x in r):\n    s = [x for x in r if x[\"coefficient\"] == c]\n    plt.loglog([float(x[\"h\"]) for x in s], [float(x[\"l2_error\"]) + 1e-300 for x in s], \"o-\", label=c)\nplt.xlabel(\"h\")\nplt.ylabel(\"window L2 error\")\nplt.legend()\n",
        "density_trend.csv" => "r = rows(\"density_trend.csv\")\nplt.loglog([int(x[\"sources\"]) for x in r], [float(x[\"relative_residual\"]) for x in r], \"o-\")\nplt.xlabel(\"sources\")\nplt.ylabel(\"relative residual\")\n",
        "density_fit.csv" => "r = rows(\"density_fit.csv\")\nsc = plt.scatter([float(x[\"x\"]) for x in r], [float(x[\"y\"]) for x in r], c=[float(x[\"re\"]) for x in r])\nplt.colorbar(sc, label=\"Re density\")\nplt.gca().set_aspect(\"equal\")\n",
        "bound_sweep.csv" => "r = rows(\"bound_sweep.csv\")\nplt.scatter([float(x[\"ln_lhs\"]) for x in r], [float(x[\"ln_rhs\"]) for x in r], s=6)\nlo = min(float(x[\"ln_lhs\"]) for x in r)\nhi = max(float(x[\"ln_rhs\"]) for x in r)\nplt.plot([lo, hi], [lo, hi], \"k-\")\nplt.xlabel(\"ln |Tf(z)|\")\nplt.ylabel(\"ln bound\")\n",
        "contamination.csv" => "r = rows(\"contamination.csv\")\nplt.semilogy([1 / float(x[\"h\"]) for x in r], [float(x[\"raw\"]) for x in r], \"o-\", label=\"raw\")\nplt.semilogy([1 / float(x[\"h\"]) for x in r], [float(x[\"residue_bound\"]) for x in r], \"s--\", label=\"bound\")\nplt.xlabel(\"1/h\")\nplt.legend()\n",
        "summary.csv" => "r = rows(\"summary.csv\")\nplt.barh([x[\"criterion\"] for x in r], [1 if x[\"passed\"] == \"true\" else 0 for x in r])\nplt.xlabel(\"passed\")\n",
        _ if name.starts_with("strip_") => return Some(format!("r = rows(\"{name}\")\nfig, ax = plt.subplots(1, 2, figsize=(10, 4))\nfor a, key in zip(ax, [\"truth\", \"estimate\"]):\n    sc = a.scatter([float(x[\"x1\"]) for x in r], [float(x[\"x2\"]) for x in r], c=[float(x[key]) for x in r])\n    a.set_title(key)\n    a.set_aspect(\"equal\")\n    fig.colorbar(sc, ax=a)\n")),
        _ => return None,
    };
    Some(b.to_string())
}

/// One `plot_<stem>.py` per recognised CSV.
pub fn scripts(files: &[(String, String)]) -> Vec<(String, String)> {
    files
        .iter()
        .filter_map(|(name, _)| {
            let stem = name.strip_suffix(".csv")?;
            Some((format!("plot_{stem}.py"), format!("{HEADER}{}finish(\"{stem}\")\n", body(name)?)))
        })
        .collect()
}

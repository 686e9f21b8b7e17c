import argparse
import json
import logging
import os
import sys

from dotenv import load_dotenv

# Ensure the bunchlab package is accessible
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from bunchlab.errors import BunchlabError
from bunchlab.models.distmodels import compile_gram, parse_gram_spec
from bunchlab.models.interferometer import InterferometerScene, h_matrix, reck_decompose
from bunchlab.models.bunching import bunching_prob
from bunchlab.models.counterexample import load_counterexample
from bunchlab.utils.io_utils import load_json, save_matrix_file

load_dotenv()

os.makedirs("logs", exist_ok=True)
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    handlers=[
        logging.FileHandler("logs/reproduce_sample.log"),
        logging.StreamHandler()
    ]
)
logger = logging.getLogger("ReproduceSampleScript")


def export_counterexample(output_dir: str) -> None:
    """Writes the embedded 18-mode unitary and a time-delay GramSpec at tau_max."""
    bundle = load_counterexample()
    unitary_path = os.path.join(output_dir, "counterexample_unitary.json")
    save_matrix_file(bundle.scene.u, unitary_path)

    network = reck_decompose(bundle.scene.u)
    logger.info(f"Reck mesh of the embedded unitary: {network.element_count} elements")

    spec = {"kind": "time_delay", "tau": [float(t) for t in bundle.tau_max], "d": 0.6201, "sigma": 1.0}
    spec_path = os.path.join(output_dir, "counterexample_delay.json")
    with open(spec_path, 'w') as f:
        json.dump(spec, f, indent=2)
    logger.info(f"GramSpec written to: {spec_path}")

    # Same computation the bunch subcommand performs on these two files
    gram = compile_gram(parse_gram_spec(load_json(spec_path)))
    scene = InterferometerScene(u=bundle.scene.u, n=bundle.h.shape[0], kappa=bundle.scene.kappa)
    result = bunching_prob(h_matrix(scene), gram)
    print(f"P(all photons in modes {list(scene.kappa)}) at d=0.6201: {result.probability:.6e}")
    print(f"python -m bunchlab bunch --unitary {unitary_path} --kappa "
          f"{','.join(str(k) for k in scene.kappa)} --gram-spec {spec_path}")


if __name__ == '__main__':
    parser = argparse.ArgumentParser(description="Export the counterexample scene as bunch-subcommand inputs")
    parser.add_argument(
        "--output-dir",
        type=str,
        default="output",
        help="Directory for the exported JSON files."
    )
    args = parser.parse_args()
    os.makedirs(args.output_dir, exist_ok=True)

    try:
        export_counterexample(args.output_dir)
    except BunchlabError as e:
        logger.error(f"Export failed: {e}")
        sys.exit(e.exit_code)

"""
Run identifier generation for the ClaDec explainer
"""

import re
from typing import Dict, Union

# Map run kinds to short prefixes
RUN_PREFIXES: Dict[str, str] = {
    "classifier": "CLS",
    "refae": "RAE",
    "cladec": "CDC",
    "evaluation": "EVL",
    "linear": "LIN",
}


class RunIdGenerator:
    """Generates deterministic run ids with kind prefixes"""

    def generate_id(self, kind: str, seed: int, point: Union[str, float, int] = "") -> str:
        """
        Generate ID with format: {prefix}{6_digit_seed}[-{point}]
        Examples: CLS000003, CDC000001-conv5, EVL000000-alpha0.5

        The id depends only on its arguments, so runs launched in parallel
        get the same ids as sequential ones.
        """
        prefix = RUN_PREFIXES.get(kind, kind.replace("_", "").upper()[:3])
        run_id = f"{prefix}{int(seed):06d}"
        label = re.sub(r"[^A-Za-z0-9.+-]+", "_", str(point)).strip("_")
        return f"{run_id}-{label}" if label else run_id

    def parse_kind(self, run_id: str) -> str:
        """Return the run kind encoded in an id ('unknown' when the prefix is not mapped)"""
        for kind, prefix in RUN_PREFIXES.items():
            if run_id.startswith(prefix):
                return kind
        return "unknown"


# Global run id generator instance
id_generator = RunIdGenerator()

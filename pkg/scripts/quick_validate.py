"""
Quick validation script for the ClaDec explainer
Fast checks before launching long sweeps
"""

import sys
from pathlib import Path

# Add parent directory to path for imports
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))


def check_dependencies():
    """Check required dependencies"""
    print("Checking dependencies...")

    required_packages = ['numpy', 'pandas', 'pydantic', 'pydantic_settings', 'dotenv', 'rich']

    missing = []
    for package in required_packages:
        try:
            __import__(package)
        except ImportError:
            missing.append(package)

    if missing:
        print(f"❌ Missing packages: {', '.join(missing)}")
        return False

    print("✅ All dependencies available")
    return True


def check_imports():
    """Check all critical imports"""
    print("Checking imports...")

    try:
        from src.core.models import build_encoder  # noqa: F401
        from src.experiments.evaluation import ExperimentRunner  # noqa: F401
        from src.core.linear_theory import optimal_linear_ae  # noqa: F401
        from src.utils.report import write_ppm  # noqa: F401
        from config.settings import settings  # noqa: F401

        print("✅ All imports successful")
        return True

    except ImportError as e:
        print(f"❌ Import failed: {e}")
        return False


def check_configuration():
    """Check configuration"""
    print("Checking configuration...")

    try:
        from config.settings import SCALE_PRESETS, settings

        print(f"  Seed: {settings.seed}")
        print(f"  Data dir: {settings.data_dir}")
        print(f"  Output dir: {settings.out_dir}")
        print(f"  Scale presets: {', '.join(SCALE_PRESETS)}")

        print("✅ Configuration OK")
        return True

    except Exception as e:
        print(f"❌ Configuration error: {e}")
        return False


def check_gradients():
    """Check a dense layer against finite differences"""
    print("Checking gradients...")

    try:
        import numpy as np
        from src.core import ops
        from src.core.gradcheck import grad_check
        from src.core.tensor import Tensor, parameter, precision

        rng = np.random.default_rng(0)
        with precision("float64"):
            x = Tensor(rng.normal(size=(3, 4)))
            weight = parameter(rng.normal(size=(4, 2)), name="weight")
            bias = parameter(rng.normal(size=2), name="bias")
            report = grad_check(lambda: ops.tensor_sum(ops.dense(x, weight, bias)), [weight, bias])

        if not report.passed(1e-6):
            print(f"❌ Relative error {report.max_rel_error:.2e}")
            return False
        print(f"✅ Gradients OK (max relative error {report.max_rel_error:.1e})")
        return True

    except Exception as e:
        print(f"❌ Gradient check error: {e}")
        return False


def check_shapes():
    """Check that every tap decodes back to 1×32×32"""
    print("Checking shapes...")

    try:
        import numpy as np
        from src.core.models import TAP_NAMES, build_refae
        from src.core.tensor import Tensor

        images = Tensor(np.zeros((2, 1, 32, 32)))
        for tap in TAP_NAMES:
            model = build_refae(tap, 10, "1/8", seed=0)
            out = model.forward(images)
            assert out.shape == (2, 1, 32, 32), f"{tap}: {out.shape}"

        print(f"✅ All {len(TAP_NAMES)} taps reconstruct 32×32 images")
        return True

    except Exception as e:
        print(f"❌ Shape error: {e}")
        return False


def main():
    """Run quick validation"""
    print("ClaDec Explainer - Quick Validation")
    print("=" * 50)

    checks = [
        check_dependencies,
        check_imports,
        check_configuration,
        check_gradients,
        check_shapes,
    ]

    results = []
    for check in checks:
        results.append((check(), check.__name__))

    print("\n" + "=" * 50)
    print("TEST SUMMARY")
    print("=" * 50)

    passed = sum(1 for passed, _ in results if passed)
    total = len(results)

    print(f"Validation Results: {passed}/{total} checks passed")

    if passed == total:
        print("Quick validation PASSED!")
        return 0
    else:
        print("Quick validation FAILED!")
        return 1


if __name__ == "__main__":
    exit_code = main()
    sys.exit(exit_code)

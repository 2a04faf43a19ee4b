"""
Setup script for the ClaDec explainer

Writes a .env with the default CLADEC_* settings and creates the data and
run directories the command line expects.
"""

import sys
from pathlib import Path

# Add parent directory to path for imports
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

try:
    from config.settings import settings
    from src.data.datasets import DATASET_DIRS, IDX_FILES
    from src.utils.logger import setup_logger
except ImportError as e:
    print(f"Import error: {e}")
    print("Project root:", project_root)
    sys.exit(1)


def create_env_file(root: Path = project_root) -> Path:
    """Create .env file with default values (an existing file is left alone)"""
    env_content = f"""# Global seed default for every subcommand
CLADEC_SEED={settings.seed}

# Locations
CLADEC_DATA_DIR={settings.data_dir}
CLADEC_OUT_DIR={settings.out_dir}

# Technical configuration
CLADEC_JOBS={settings.jobs}
CLADEC_LOG_LEVEL={settings.log_level}
CLADEC_DEBUG_NUMERICS={str(settings.debug_numerics).lower()}
"""
    env_file = root / ".env"
    if not env_file.exists():
        env_file.write_text(env_content, encoding="utf-8")
        print(f"Created .env file at {env_file}")
        print("Please update the configuration values as needed")
    else:
        print(f".env file already exists at {env_file}")
    return env_file


def create_directories(root: Path = project_root) -> list:
    """Create data/<dataset> folders for the IDX files and the run output root"""
    logger = setup_logger("setup", "INFO")
    data_dir = root / settings.data_dir if not settings.data_dir.is_absolute() else settings.data_dir
    out_dir = root / settings.out_dir if not settings.out_dir.is_absolute() else settings.out_dir

    created = []
    for directory in [data_dir / name for name in DATASET_DIRS.values()] + [out_dir]:
        directory.mkdir(parents=True, exist_ok=True)
        created.append(directory)
        logger.info(f"Directory ready: {directory}")
    return created


def missing_idx_files(root: Path = project_root) -> list:
    """IDX files not yet present under the data directory"""
    data_dir = root / settings.data_dir if not settings.data_dir.is_absolute() else settings.data_dir
    missing = []
    for name in DATASET_DIRS.values():
        for images, labels in IDX_FILES.values():
            for filename in (images, labels):
                if not (data_dir / name / filename).exists():
                    missing.append(data_dir / name / filename)
    return missing


def main() -> int:
    """Main setup function"""
    print("ClaDec Explainer - Setup")
    print("=" * 50)

    create_env_file()
    create_directories()

    missing = missing_idx_files()
    if missing:
        print(f"\n⚠️  {len(missing)} IDX file(s) not found; the 'synth' dataset works without them.")
        print("Place the uncompressed MNIST / Fashion-MNIST files in:")
        for directory in sorted({path.parent for path in missing}):
            print(f"  {directory}")

    print("\nSetup completed successfully!")
    print("\nNext steps:")
    print("1. Update .env file with your configuration")
    print("2. Run: cladec grad-check")
    print("3. Run: cladec sweep layer --dataset synth --scale desk --seeds 3")
    return 0


if __name__ == "__main__":
    sys.exit(main())

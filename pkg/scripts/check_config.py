#!/usr/bin/env python3
"""
Check Configuration Status

Loads the engine config and every campaign under config/campaigns/, builds
and validates each plan, and prints one status line per campaign.
Usage: python scripts/check_config.py [campaign.toml ...]
"""

import os
import sys
from pathlib import Path

# Add project root to path
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from src.experiment.plan import ExperimentPlan  # noqa: E402
from src.utils.config import get_output_dir, load_campaign, load_config  # noqa: E402
from src.utils.errors import RareExitError  # noqa: E402


def check_env_var(name: str, fallback_msg: str = "") -> bool:
    """Check if an optional environment variable is set."""
    value = os.getenv(name)
    if value:
        print(f"  {name}: ✅ Set ({value})")
        return True
    msg = f" - {fallback_msg}" if fallback_msg else ""
    print(f"  {name}: ⚪ Not set{msg}")
    return False


def check_campaign(path: Path) -> bool:
    try:
        campaign = load_campaign(str(path))
        plan = ExperimentPlan.from_campaign(campaign)
        plan.validate()
    except (RareExitError, OSError) as e:
        print(f"  {path.name}: ❌ {type(e).__name__}: {e}")
        return False
    print(f"  {path.name}: ✅ d={plan.system.dim}, {len(plan.targets)} targets, "
          f"{len(plan.epsilons)} ε values → {get_output_dir(plan.campaign)}")
    return True


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    print("=" * 60)
    print("Configuration Status Check")
    print("=" * 60)

    print("\n🌍 Environment:")
    check_env_var("RARE_EXIT_OUT", fallback_msg="outputs go to runs/")
    check_env_var("RARE_EXIT_SLOW", fallback_msg="slow acceptance tests skipped")

    print("\n📄 Engine Config:")
    config_path = project_root / "config" / "config.yaml"
    try:
        config = load_config(str(config_path))
        print(f"  config/config.yaml: ✅ Loaded ({len(config)} sections)")
    except (RareExitError, OSError) as e:
        print(f"  config/config.yaml: ❌ {e}")
        return 1

    print("\n🧪 Campaigns:")
    paths = [Path(p) for p in argv] or sorted((project_root / "config" / "campaigns").glob("*.toml"))
    results = [check_campaign(p) for p in paths]

    print("\n" + "=" * 60)
    ok = all(results)
    if ok:
        print(f"✅ {len(results)} campaign(s) valid")
        print("   Run: python -m src.main_orchestrator predict --config config/campaigns/smoke.toml")
    else:
        print(f"❌ {results.count(False)} of {len(results)} campaign(s) invalid")
    print("=" * 60)
    return 0 if ok else 2


if __name__ == "__main__":
    sys.exit(main())

"""Regenerate the model files shipped in src/floatbase/data from the builders."""

from pathlib import Path

from floatbase.library import BUILDERS
from floatbase.modelio import serialize_model

DATA = Path(__file__).resolve().parents[1] / "src" / "floatbase" / "data"


def main():
    DATA.mkdir(parents=True, exist_ok=True)
    for name, build in BUILDERS.items():
        path = DATA / f"{name}.urdf"
        path.write_text(serialize_model(build()), encoding="utf-8")
        print(f"wrote {path}")


if __name__ == "__main__":
    main()

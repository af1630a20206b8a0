"""Write the reference models as JSON files under models/."""

from pathlib import Path

from avgmdp.instances import coexploration, discontinuous_gaps, leveling_models, regret_discontinuity
from avgmdp.model import save_model

OUT = Path(__file__).resolve().parent.parent / "models"


def main():
    OUT.mkdir(exist_ok=True)
    m, m2 = leveling_models()
    models = {
        "discontinuous_gaps_0.1": discontinuous_gaps(0.1),
        "discontinuous_gaps_0": discontinuous_gaps(0.0),
        "leveling": m,
        "leveling_perturbed": m2,
        "regret_discontinuity": regret_discontinuity(),
        "regret_discontinuity_0.02": regret_discontinuity(0.02),
        "regret_discontinuity_0.05": regret_discontinuity(0.05),
        "coexploration_0.1": coexploration(0.1),
    }
    for name, model in models.items():
        save_model(model, OUT / f"{name}.json")
        print(OUT / f"{name}.json")


if __name__ == "__main__":
    main()

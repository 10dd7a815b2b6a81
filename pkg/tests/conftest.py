import sys
from pathlib import Path

import pytest

from semipert.coord_ops import RateField, build_walk_generator, perturbation_from

sys.path.insert(0, str(Path(__file__).parent))

FREE = RateField()
TRAP = RateField(defects={0: (0.0, 0.0)})
TWO_DEFECT = RateField(defects={0: (3.0, 2.0), 4: (0.5, 0.5)})
SINGLE = RateField(defects={0: (2.0, 1.0)})
THREE_DEFECT = RateField(defects={-4: (2.0, 0.5), 0: (3.0, 2.0), 4: (0.5, 0.5)})


def perturbation(rates):
    A0 = build_walk_generator(RateField(rates.background_lambda, rates.background_mu))
    return perturbation_from(build_walk_generator(rates), A0)


@pytest.fixture
def trap_D():
    return perturbation(TRAP)


@pytest.fixture
def two_defect_D():
    return perturbation(TWO_DEFECT)

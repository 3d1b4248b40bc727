import numpy as np
import pytest

from rfray.scene import Scene, TxNode, RxNode

from helpers import make_wall


@pytest.fixture
def mirror_scene() -> Scene:
    """One wall in the y=0 plane with TX/RX mirrored about it."""
    return Scene(
        surfaces=(make_wall(0),),
        tx_nodes=(TxNode(0, np.array([0.0, 1.0, 0.0]), 10.0),),
        rx_nodes=(RxNode(0, np.array([2.0, 1.0, 0.0])),),
        carrier_wavelength_m=0.125,
    )

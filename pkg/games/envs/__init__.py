from games.envs.gems import GemsConfig, GemsGame
from games.envs.matrix import MatrixGameConfig, MatrixGame
from games.exceptions import ConfigError
from games.markov_game import MarkovGame


def build_env(data: dict) -> MarkovGame:
    """Instantiate an environment from its config dict (``type`` selects it)."""
    env_type = data.get("type")
    if env_type == "gems":
        return GemsGame(GemsConfig.from_dict(data))
    if env_type == "matrix":
        return MatrixGame(MatrixGameConfig.from_dict(data))
    raise ConfigError(f"unknown environment type '{env_type}'.")

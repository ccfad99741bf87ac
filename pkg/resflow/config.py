from pathlib import Path

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    # Finite differences and tolerances
    fd_step: float = 1e-5
    derivative_rtol: float = 1e-6
    bound_tol: float = 1e-9
    se_multiplier: float = 3.0

    # Constant certification
    certify_rtol: float = 1e-9
    certify_sample_budget: int = 2000
    certify_sample_scale: float = 3.0

    # Flow construction and inversion
    stop_tol: float = 1e-12
    inverse_tol: float = 1e-12
    inverse_max_iter: int = 60
    max_safety_doublings: int = 6

    # Output
    out_dir: Path = Path("runs")
    log_level: str = "INFO"

    model_config = SettingsConfigDict(env_prefix="RESFLOW_", env_file=".env", case_sensitive=False)


settings = Settings()

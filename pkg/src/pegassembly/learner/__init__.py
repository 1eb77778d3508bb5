from .sac import (  # noqa: F401
    Action,
    Observation,
    PolicyParams,
    ReplayBuffer,
    ResidualSacConfig,
    RewardSpec,
    Transition,
    act,
    combine,
    load_policy,
    reward,
    save_policy,
    update,
)
from .training import (  # noqa: F401
    ClassroomConfig,
    CurriculumState,
    curriculum_update,
    run_training,
)

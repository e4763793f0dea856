"""Domain generators."""

from .toys import TOY_NAMES, gen_toy
from .warehouse import (
    SCENARIOS,
    Warehouse,
    WarehouseConfig,
    WarehouseError,
    build_warehouse,
    count_states,
    gen_warehouse,
    mini_config,
    parse_config,
    tiny_config,
)

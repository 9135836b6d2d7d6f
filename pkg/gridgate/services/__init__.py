"""Business logic: per-unit model, rule checks, load flow, validation,
sensitivities and hosting capacity."""

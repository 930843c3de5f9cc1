import carct.inference

# library dataclass named Test*; keep pytest from trying to collect it
carct.inference.TestSpec.__test__ = False

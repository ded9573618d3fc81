import hypothesis
import numpy as np

np.seterr(all="warn")

hypothesis.settings.register_profile(
    "default", deadline=None, max_examples=50, derandomize=True
)
hypothesis.settings.load_profile("default")

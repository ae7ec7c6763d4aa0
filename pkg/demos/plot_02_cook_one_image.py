"""
Cooking a single image
======================

A protected ("cooked") image is found by gradient steps on the input
that make a surrogate model *more* confident in a target class. Steps
stop as soon as the image would drift below the SSIM threshold.
"""

# %%
# Train a surrogate briefly on raw synthetic data.
import numpy as np

from cookbench import CraftConfig, SynthRecipe, synth_dataset, train
from cookbench.nn import init_params, small_cnn, softmax, forward
from cookbench.trainer import TrainConfig

tr, te = synth_dataset(SynthRecipe(per_class_train=200, per_class_test=50), seed=1)
spec = small_cnn(tr.sample_shape, tr.num_classes)
surrogate, history = train(spec, init_params(spec, 0), tr, TrainConfig(epochs=30, shuffle_seed=1))
print("surrogate train accuracy", history.acc[-1])

# %%
# Pick the surrogate's own prediction as the target (the pseudo-label
# rule) and run the crafting loop on one test image.
from cookbench.cook import assign_pseudo_labels, craft_example
from cookbench.ssim import ssim

x = te.images[0]
target = int(assign_pseudo_labels(spec, surrogate, te.images[:1]).labels[0])
cfg = CraftConfig()
x_cooked, trace = craft_example(spec, surrogate, x, target, cfg)
print("iterations", trace.iterations_run, "stopped by", trace.terminated_by.value)
print("SSIM to the raw image", round(trace.final_ssim, 4), "==", round(ssim(x, x_cooked), 4))

# %%
# The loss falls at every iteration and the target probability rises.
p_before = softmax(forward(spec, surrogate, x[None]))[0, target]
p_after = softmax(forward(spec, surrogate, x_cooked[None]))[0, target]
print("loss trace", np.round(trace.loss_history[:5], 3), "...", np.round(trace.loss_history[-1], 3))
print(f"target probability {p_before:.4f} -> {p_after:.4f}")

# %%
# The change is small but structured: it follows the surrogate's input
# gradient rather than looking like noise.
delta = x_cooked - x
print("max |delta|", np.abs(delta).max(), "mean delta", delta.mean())

# %%
# The adversarial direction does the opposite and lowers the probability.
adv, _ = craft_example(spec, surrogate, x, target, CraftConfig(direction="adv"))
print("adversarial target probability", softmax(forward(spec, surrogate, adv[None]))[0, target])

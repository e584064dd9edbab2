"""End-to-end poisoning attack at reduced scale.

The pipeline: train the trigger autoencoder on clean data, poison 5% of
the training set (relabeling to the target class), train a victim
classifier on the poisoned set, and measure clean accuracy plus the
attack success rate on triggered test clouds.  About five minutes at the
reduced settings below; the shipped default config (configs/default.json)
runs the full desk-scale version of the same pipeline.
"""

from pcbd.ae import AEConfig, train_ae
from pcbd.cloud import DEFAULT_FAMILIES, synth_dataset
from pcbd.rng import SeededRng
from pcbd.triggers import TriggerSpec
from pcbd.victims import (
    PoisonPlan,
    VictimSpec,
    eval_acc,
    eval_asr,
    poison_dataset,
    train_victim,
)

SEED = 7
base = SeededRng(SEED)

train = synth_dataset(DEFAULT_FAMILIES, 30, 256, base.derive(1))
test = synth_dataset(DEFAULT_FAMILIES, 8, 256, base.derive(2), split="test")
print(f"dataset: {len(train)} train / {len(test)} test clouds, 8 classes")

print("training the trigger autoencoder (60 epochs) ...")
ae = train_ae(train, AEConfig(epochs=60), base.derive(3))

trigger = TriggerSpec("iba", seed=SEED)
plan = PoisonPlan(rate=0.05, target_label=0, trigger=trigger, seed=SEED)
poisoned, idx = poison_dataset(train, plan, ae_model=ae)
print(f"poisoned {len(idx)} of {len(train)} entries -> label 0")

spec = VictimSpec(epochs=60)
print("training the baseline victim ...")
baseline = train_victim(train, spec, base.derive(4))
print("training the poisoned victim ...")
victim = train_victim(poisoned, spec, base.derive(4))

acc_clean = eval_acc(baseline, test)
acc_poisoned = eval_acc(victim, test)
asr = eval_asr(victim, test, trigger, 0, ae_model=ae)

print("\nresults:")
print(f"  baseline clean ACC : {acc_clean * 100:.1f}%")
print(f"  poisoned clean ACC : {acc_poisoned * 100:.1f}%  "
      f"(function preservation)")
print(f"  ASR (non-target)   : {asr.asr * 100:.1f}%")
print(f"  ASR (all entries)  : {asr.asr_all * 100:.1f}%")

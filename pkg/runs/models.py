from __future__ import annotations

from django.db import models


class RunStatus(models.TextChoices):
    RUNNING = "running", "Running"
    FINISHED = "finished", "Finished"
    DIVERGED = "diverged", "Diverged"
    STOPPED = "stopped", "Stopped"
    FAILED = "failed", "Failed"


class ExperimentRunQuerySet(models.QuerySet):
    def for_seed(self, seed: int):
        return self.filter(seed=seed)

    def completed(self):
        return self.filter(status__in=[RunStatus.FINISHED, RunStatus.DIVERGED, RunStatus.STOPPED])


class ExperimentRun(models.Model):
    name = models.CharField(max_length=120, blank=True)
    mode = models.CharField(max_length=32)
    strategy = models.CharField(max_length=64)
    seed = models.PositiveBigIntegerField()
    config = models.JSONField(default=dict)
    status = models.CharField(max_length=16, choices=RunStatus.choices, default=RunStatus.RUNNING)
    summary = models.JSONField(default=dict, blank=True)
    records_path = models.CharField(max_length=512, blank=True)
    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    objects = ExperimentRunQuerySet.as_manager()

    class Meta:
        ordering = ["-created_at"]

    def __str__(self) -> str:
        return f"{self.name or 'run'} ({self.strategy}, seed {self.seed})"

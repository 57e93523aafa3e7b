from django.db import models
import uuid


class ScenarioRun(models.Model):
    """One invocation of the fishtax command"""
    id = models.UUIDField(primary_key=True, default=uuid.uuid4, editable=False)
    command = models.CharField(max_length=20, choices=[
        ('solve', 'Solve value function'),
        ('simulate', 'Simulate strategies'),
        ('pulse', 'Pulse fishing'),
        ('tax-sim', 'Taxation simulation'),
        ('critical-tax', 'Critical tax'),
        ('validate', 'Validate configuration'),
    ])
    config_path = models.CharField(max_length=500)
    config_echo = models.JSONField(default=dict, blank=True)

    status = models.CharField(max_length=20, default='queued', choices=[
        ('queued', 'Queued'),
        ('processing', 'Processing'),
        ('completed', 'Completed'),
        ('failed', 'Failed'),
    ])

    summary = models.JSONField(default=dict, blank=True)
    output_dir = models.CharField(max_length=500, blank=True)
    error_message = models.TextField(blank=True, null=True)

    created_date = models.DateTimeField(auto_now_add=True)
    completed_date = models.DateTimeField(null=True, blank=True)

    class Meta:
        ordering = ['-created_date']

    def __str__(self):
        return f"{self.command} - {self.config_path} ({self.status})"

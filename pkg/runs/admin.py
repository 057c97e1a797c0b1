from django.contrib import admin

from .models import ExperimentRun


@admin.register(ExperimentRun)
class ExperimentRunAdmin(admin.ModelAdmin):
    list_display = ("name", "strategy", "mode", "seed", "status", "created_at")
    search_fields = ("name", "strategy", "records_path")
    list_filter = ("status", "mode", "strategy")
    readonly_fields = ("config", "summary", "created_at", "updated_at")

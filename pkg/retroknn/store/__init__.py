from .stores import TemplateStore, build_index, build_stores, load_store, save_store, store_summary

__all__ = [
    "TemplateStore",
    "build_index",
    "build_stores",
    "load_store",
    "save_store",
    "store_summary",
]

import os
import importlib
import inspect
from loguru import logger
from base_emitter import BaseEmitter


def load_emitters(enabled_emitters: list = None):
    """
    Dynamically loads emitter classes from the current directory.
    Only loads classes that inherit from BaseEmitter and are not BaseEmitter itself.
    Emitters come back sorted by name so output order is stable.
    """
    emitters = []
    current_dir = os.path.dirname(__file__)

    for filename in sorted(os.listdir(current_dir)):
        if filename.endswith(".py") and filename != "__init__.py":
            module_name = f"emitters.{filename[:-3]}"
            try:
                module = importlib.import_module(module_name)
                for name, obj in inspect.getmembers(module):
                    if (inspect.isclass(obj) and
                        issubclass(obj, BaseEmitter) and
                        obj is not BaseEmitter and
                        obj.__module__ == module_name):

                        instance = obj()
                        if enabled_emitters is None or instance.name in enabled_emitters:
                            emitters.append(instance)
                            logger.debug(f"Loaded emitter: {instance.name} from {module_name}")
            except Exception as e:
                logger.error(f"Failed to load emitter from {module_name}: {e}")

    return emitters

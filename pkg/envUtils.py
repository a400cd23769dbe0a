import os

from dotenv import load_dotenv

load_dotenv()

# cmd_eval 并行病例数上限，优先级高于 config.yaml 的 eval.max_workers
max_workers = os.getenv('VIEWBRIDGE_MAX_WORKERS')
log_level = os.getenv('VIEWBRIDGE_LOG_LEVEL', 'INFO')
config_path = os.getenv('VIEWBRIDGE_CONFIG')

if __name__ == '__main__':
    print(max_workers)
    print(log_level)
    print(config_path)

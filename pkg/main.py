import logging
import os

from backend.app import app

if __name__ == '__main__':
    logging.basicConfig(level=os.environ.get('SCOOPLOCK_LOG_LEVEL', 'INFO'))
    app.run(host='0.0.0.0', port=int(os.environ.get('PORT', 5000)))

import sys

from dotenv import load_dotenv

# Load environment variables before the app reads them
load_dotenv()

from app import create_app  # noqa: E402

# Create the command line application
application = create_app()

if __name__ == "__main__":
    sys.exit(application.run())
